//! Tensor encoding shared by the GCN and projector checkpoints: shape metadata
//! plus base64 of little-endian `f32` values.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed")]
    Io(#[from] std::io::Error),
    #[error("invalid checkpoint json")]
    Json(#[from] serde_json::Error),
    #[error("tensor {name}: {msg}")]
    Tensor { name: String, msg: String },
    #[error("checkpoint format {found:?}, expected {expected:?}")]
    Format { found: String, expected: String },
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedTensor {
    pub fn from_slice(name: &str, shape: Vec<usize>, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for &v in values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        EncodedTensor {
            name: name.to_string(),
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn from_matrix(name: &str, m: &Array2<f64>) -> Self {
        let values: Vec<f64> = m.iter().copied().collect();
        Self::from_slice(name, vec![m.nrows(), m.ncols()], &values)
    }

    pub fn from_vector(name: &str, v: &Array1<f64>) -> Self {
        Self::from_slice(name, vec![v.len()], v.as_slice().expect("contiguous"))
    }

    pub fn values(&self) -> Result<Vec<f64>, CheckpointError> {
        let err = |msg: String| CheckpointError::Tensor {
            name: self.name.clone(),
            msg,
        };
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| err(format!("bad base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(err(format!("{} bytes is not a multiple of 4", bytes.len())));
        }
        let expected: usize = self.shape.iter().product();
        if bytes.len() / 4 != expected {
            return Err(err(format!(
                "shape {:?} needs {expected} values, found {}",
                self.shape,
                bytes.len() / 4
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        Ok(values)
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>, CheckpointError> {
        if self.shape.len() != 2 {
            return Err(CheckpointError::Tensor {
                name: self.name.clone(),
                msg: format!("expected a matrix, shape is {:?}", self.shape),
            });
        }
        let values = self.values()?;
        Ok(Array2::from_shape_vec((self.shape[0], self.shape[1]), values)
            .expect("length checked against shape"))
    }

    pub fn to_vector(&self) -> Result<Array1<f64>, CheckpointError> {
        if self.shape.len() != 1 {
            return Err(CheckpointError::Tensor {
                name: self.name.clone(),
                msg: format!("expected a vector, shape is {:?}", self.shape),
            });
        }
        Ok(Array1::from(self.values()?))
    }
}

pub(crate) fn find<'a>(
    tensors: &'a [EncodedTensor],
    name: &str,
) -> Result<&'a EncodedTensor, CheckpointError> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_shape_mismatch() {
        let mut t = EncodedTensor::from_slice("w", vec![2], &[1.0, 2.0]);
        t.shape = vec![3];
        assert!(t.values().is_err());
    }

    #[test]
    fn little_endian_layout() {
        let t = EncodedTensor::from_slice("w", vec![1], &[1.0]);
        assert_eq!(STANDARD.decode(&t.data).unwrap(), vec![0, 0, 0x80, 0x3f]);
    }

    proptest! {
        #[test]
        fn matrix_round_trips_at_f32_precision(
            rows in 1usize..5, cols in 1usize..5,
            seed in proptest::collection::vec(-1e3f64..1e3, 25)
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 5 + j]);
            let back = EncodedTensor::from_matrix("m", &m).to_matrix().unwrap();
            prop_assert_eq!(back.dim(), m.dim());
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert_eq!(*a, (*b as f32) as f64);
            }
        }
    }
}
