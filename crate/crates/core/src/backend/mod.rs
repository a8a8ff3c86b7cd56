//! Language model backends: a trait for text embedding and hybrid-prompt
//! generation, a deterministic mock, and an HTTP client for an external
//! model server.

mod bridge;
mod mock;

pub use bridge::{wire_segments, BridgeClient, WireSegment};
pub use mock::{fnv1a, tokenize, MockBackend};

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::HybridPrompt;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    /// Embedding width `h`.
    pub h: usize,
    pub max_segments: usize,
    pub max_concurrency: usize,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_tokens: usize,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_tokens: 4096,
            decoding: Decoding::Greedy,
            stop: Vec::new(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

pub trait LlmBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Unit-norm embedding of `text` in `R^h`.
    fn embed_text(&self, text: &str) -> Result<Array1<f64>, BackendError>;

    fn generate(&self, prompt: &HybridPrompt, cfg: &GenerationConfig) -> Result<String, BackendError>;
}

fn check_segments(prompt: &HybridPrompt, desc: &BackendDescriptor) -> Result<(), BackendError> {
    if prompt.segments.len() > desc.max_segments {
        return Err(BackendError::MalformedPrompt(format!(
            "{} segments exceed the backend limit of {}",
            prompt.segments.len(),
            desc.max_segments
        )));
    }
    for seg in &prompt.segments {
        if let crate::prompt::Segment::Soft { node, matrix } = seg {
            if matrix.ncols() != desc.h {
                return Err(BackendError::MalformedPrompt(format!(
                    "soft prompt for node {node} has width {}, backend expects {}",
                    matrix.ncols(),
                    desc.h
                )));
            }
        }
    }
    Ok(())
}

/// Embeds every text in order, one row per text.
pub fn embed_all(backend: &dyn LlmBackend, texts: &[String]) -> Result<ndarray::Array2<f64>, BackendError> {
    let h = backend.descriptor().h;
    let mut rows = ndarray::Array2::zeros((texts.len(), h));
    for (i, t) in texts.iter().enumerate() {
        let v = backend.embed_text(t)?;
        if v.len() != h {
            return Err(BackendError::Protocol(format!(
                "embedding has {} entries, descriptor says h={h}",
                v.len()
            )));
        }
        rows.row_mut(i).assign(&v);
    }
    Ok(rows)
}
