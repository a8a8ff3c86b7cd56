//! Three-layer graph convolutional network for node classification.
//!
//! Each layer computes `Â · H · W + b` with the symmetric normalized adjacency
//! `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`. The first two layers are followed by a
//! ReLU; the third produces class logits. The ReLU output of the second layer
//! is the node embedding handed to the projector.
//!
//! Training is full-batch Adam on the mean cross-entropy of the training
//! split, with gradients written out by hand.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{find, CheckpointError, EncodedTensor};
use crate::graph::{NodeId, TextAttributedGraph};
use crate::optim::Adam;

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("model expects {expected} input features, graph has {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("model has {model} classes, graph has {graph}")]
    ClassCount { model: usize, graph: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("graph has no training nodes")]
    NoTrainingNodes,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("node {0} is not in the graph")]
    InvalidNode(NodeId),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Symmetric normalized adjacency with self-loops, in CSR form.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &TextAttributedGraph) -> Self {
        let n = graph.num_nodes();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for v in 0..n {
            // neighbor lists are sorted; splice the self-loop in order
            let mut placed = false;
            for &u in graph.neighbors(v) {
                if !placed && u > v {
                    cols.push(v);
                    vals.push(inv_sqrt[v] * inv_sqrt[v]);
                    placed = true;
                }
                cols.push(u);
                vals.push(inv_sqrt[v] * inv_sqrt[u]);
            }
            if !placed {
                cols.push(v);
                vals.push(inv_sqrt[v] * inv_sqrt[v]);
            }
            row_ptr.push(cols.len());
        }
        NormalizedAdjacency {
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// `Â · m`
    pub fn propagate(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(m.raw_dim());
        for i in 0..self.num_nodes() {
            let mut row = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row.scaled_add(self.vals[k], &m.row(self.cols[k]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[[i, self.cols[k]]] = self.vals[k];
            }
        }
        out
    }
}

/// Input features, stored sparsely when mostly zero (bag-of-words).
#[derive(Debug, Clone)]
enum FeatureMatrix {
    Dense(Array2<f64>),
    Sparse {
        ncols: usize,
        rows: Vec<Vec<(usize, f64)>>,
    },
}

impl FeatureMatrix {
    fn new(x: &Array2<f64>) -> Self {
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        if (nnz as f64) < 0.2 * x.len() as f64 {
            let rows = x
                .outer_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(j, v)| (j, *v))
                        .collect()
                })
                .collect();
            FeatureMatrix::Sparse {
                ncols: x.ncols(),
                rows,
            }
        } else {
            FeatureMatrix::Dense(x.clone())
        }
    }

    /// `X · w`
    fn matmul(&self, w: &Array2<f64>) -> Array2<f64> {
        match self {
            FeatureMatrix::Dense(x) => x.dot(w),
            FeatureMatrix::Sparse { rows, .. } => {
                let mut out = Array2::zeros((rows.len(), w.ncols()));
                for (i, row) in rows.iter().enumerate() {
                    let mut o = out.row_mut(i);
                    for &(j, v) in row {
                        o.scaled_add(v, &w.row(j));
                    }
                }
                out
            }
        }
    }

    /// `Xᵀ · g`
    fn t_matmul(&self, g: &Array2<f64>) -> Array2<f64> {
        match self {
            FeatureMatrix::Dense(x) => x.t().dot(g),
            FeatureMatrix::Sparse { ncols, rows } => {
                let mut out = Array2::zeros((*ncols, g.ncols()));
                for (i, row) in rows.iter().enumerate() {
                    for &(j, v) in row {
                        out.row_mut(j).scaled_add(v, &g.row(i));
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    /// `W₁: d×hid`, `W₂: hid×hid`, `W₃: hid×C`
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
    pub activation: Activation,
    pub trained_on: String,
}

/// Per-node GNN embeddings taken after the second layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Array2<f64>,
    pub source: String,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, v: NodeId) -> ndarray::ArrayView1<'_, f64> {
        self.rows.row(v)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub embeddings: EmbeddingTable,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.outer_iter().map(|r| argmax(r.iter())).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

struct Cache {
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
    h2: Array2<f64>,
    logits: Array2<f64>,
}

pub struct Gradients {
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
}

impl GcnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(
        num_features: usize,
        hidden_dim: usize,
        num_classes: usize,
        seed: u64,
        trained_on: &str,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
        };
        let weights = [
            glorot(num_features, hidden_dim),
            glorot(hidden_dim, hidden_dim),
            glorot(hidden_dim, num_classes),
        ];
        let biases = [
            Array1::zeros(hidden_dim),
            Array1::zeros(hidden_dim),
            Array1::zeros(num_classes),
        ];
        GcnModel {
            weights,
            biases,
            activation: Activation::Relu,
            trained_on: trained_on.to_string(),
        }
    }

    pub fn zeros(num_features: usize, hidden_dim: usize, num_classes: usize) -> Self {
        GcnModel {
            weights: [
                Array2::zeros((num_features, hidden_dim)),
                Array2::zeros((hidden_dim, hidden_dim)),
                Array2::zeros((hidden_dim, num_classes)),
            ],
            biases: [
                Array1::zeros(hidden_dim),
                Array1::zeros(hidden_dim),
                Array1::zeros(num_classes),
            ],
            activation: Activation::Relu,
            trained_on: String::new(),
        }
    }

    pub fn num_features(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.weights[2].ncols()
    }

    fn check_shapes(&self) -> Result<(), GcnError> {
        let [w1, w2, w3] = &self.weights;
        let [b1, b2, b3] = &self.biases;
        let hid = w1.ncols();
        let ok = w2.dim() == (hid, hid)
            && w3.nrows() == hid
            && b1.len() == hid
            && b2.len() == hid
            && b3.len() == w3.ncols();
        if !ok {
            return Err(GcnError::Config(format!(
                "weight shapes do not chain: {:?} {:?} {:?}",
                w1.dim(),
                w2.dim(),
                w3.dim()
            )));
        }
        Ok(())
    }

    fn forward_cached(
        &self,
        adj: &NormalizedAdjacency,
        x: &FeatureMatrix,
    ) -> Result<Cache, GcnError> {
        let layer = |input: Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| {
            let mut out = adj.propagate(&input.dot(w));
            out += b;
            out
        };
        let mut a1 = adj.propagate(&x.matmul(&self.weights[0]));
        a1 += &self.biases[0];
        let h1 = a1.mapv(relu);
        let a2 = layer(h1.clone(), &self.weights[1], &self.biases[1]);
        let h2 = a2.mapv(relu);
        let logits = layer(h2.clone(), &self.weights[2], &self.biases[2]);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(GcnError::NonFinite("logits"));
        }
        Ok(Cache {
            a1,
            h1,
            a2,
            h2,
            logits,
        })
    }

    /// Class logits and second-layer embeddings for every node of `graph`.
    pub fn forward(&self, graph: &TextAttributedGraph) -> Result<ForwardOutput, GcnError> {
        self.check_shapes()?;
        if graph.feature_dim() != self.num_features() {
            return Err(GcnError::FeatureDim {
                expected: self.num_features(),
                got: graph.feature_dim(),
            });
        }
        let adj = NormalizedAdjacency::new(graph);
        let cache = self.forward_cached(&adj, &FeatureMatrix::new(graph.features()))?;
        Ok(ForwardOutput {
            logits: cache.logits,
            embeddings: EmbeddingTable {
                rows: cache.h2,
                source: self.trained_on.clone(),
            },
        })
    }

    /// Predicted class of `v`; ties go to the lowest class index.
    pub fn predict(&self, graph: &TextAttributedGraph, v: NodeId) -> Result<usize, GcnError> {
        if v >= graph.num_nodes() {
            return Err(GcnError::InvalidNode(v));
        }
        let out = self.forward(graph)?;
        Ok(argmax(out.logits.row(v).iter()))
    }

    /// Mean cross-entropy over `targets` and its gradient.
    fn loss_and_grad(
        &self,
        adj: &NormalizedAdjacency,
        x: &FeatureMatrix,
        labels: &[usize],
        targets: &[NodeId],
    ) -> Result<(f64, Gradients), GcnError> {
        let cache = self.forward_cached(adj, x)?;
        let n_t = targets.len() as f64;
        let mut d_logits = Array2::zeros(cache.logits.raw_dim());
        let mut loss = 0.0;
        for &v in targets {
            let row = cache.logits.row(v);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[labels[v]];
            let mut d = d_logits.row_mut(v);
            for (c, z) in row.iter().enumerate() {
                d[c] = (z - log_z).exp() / n_t;
            }
            d[labels[v]] -= 1.0 / n_t;
        }
        loss /= n_t;

        let g3 = adj.propagate(&d_logits);
        let dw3 = cache.h2.t().dot(&g3);
        let db3 = d_logits.sum_axis(Axis(0));
        let mut d_a2 = g3.dot(&self.weights[2].t());
        d_a2.zip_mut_with(&cache.a2, |d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        let g2 = adj.propagate(&d_a2);
        let dw2 = cache.h1.t().dot(&g2);
        let db2 = d_a2.sum_axis(Axis(0));
        let mut d_a1 = g2.dot(&self.weights[1].t());
        d_a1.zip_mut_with(&cache.a1, |d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        let g1 = adj.propagate(&d_a1);
        let dw1 = x.t_matmul(&g1);
        let db1 = d_a1.sum_axis(Axis(0));

        Ok((
            loss,
            Gradients {
                weights: [dw1, dw2, dw3],
                biases: [db1, db2, db3],
            },
        ))
    }

    /// Training loss and analytic gradient on `graph`'s training split.
    pub fn training_loss_and_grad(
        &self,
        graph: &TextAttributedGraph,
    ) -> Result<(f64, Gradients), GcnError> {
        let targets = &graph.splits().train;
        if targets.is_empty() {
            return Err(GcnError::NoTrainingNodes);
        }
        let adj = NormalizedAdjacency::new(graph);
        self.loss_and_grad(&adj, &FeatureMatrix::new(graph.features()), graph.labels(), targets)
    }

    /// Rounds every parameter to `f32` precision, so that a saved and
    /// reloaded model is bit-identical to the in-memory one.
    pub fn round_to_f32(&mut self) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v as f32 as f64);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn to_checkpoint(&self) -> GcnCheckpoint {
        let mut tensors = Vec::new();
        for (i, w) in self.weights.iter().enumerate() {
            tensors.push(EncodedTensor::from_matrix(&format!("W{}", i + 1), w));
        }
        for (i, b) in self.biases.iter().enumerate() {
            tensors.push(EncodedTensor::from_vector(&format!("b{}", i + 1), b));
        }
        GcnCheckpoint {
            format: GCN_FORMAT.to_string(),
            version: 1,
            trained_on: self.trained_on.clone(),
            num_features: self.num_features(),
            hidden_dim: self.hidden_dim(),
            num_classes: self.num_classes(),
            num_layers: 3,
            activation: self.activation,
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &GcnCheckpoint) -> Result<Self, GcnError> {
        if ckpt.format != GCN_FORMAT {
            return Err(CheckpointError::Format {
                found: ckpt.format.clone(),
                expected: GCN_FORMAT.into(),
            }
            .into());
        }
        let w = |name: &str| find(&ckpt.tensors, name).and_then(|t| t.to_matrix());
        let b = |name: &str| find(&ckpt.tensors, name).and_then(|t| t.to_vector());
        let model = GcnModel {
            weights: [w("W1")?, w("W2")?, w("W3")?],
            biases: [b("b1")?, b("b2")?, b("b3")?],
            activation: ckpt.activation,
            trained_on: ckpt.trained_on.clone(),
        };
        model.check_shapes()?;
        if model.num_features() != ckpt.num_features
            || model.hidden_dim() != ckpt.hidden_dim
            || model.num_classes() != ckpt.num_classes
        {
            return Err(GcnError::Config(
                "checkpoint shape metadata disagrees with its tensors".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), GcnError> {
        let bytes = serde_json::to_vec_pretty(&self.to_checkpoint()).map_err(CheckpointError::from)?;
        std::fs::write(path, bytes).map_err(CheckpointError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GcnError> {
        let bytes = std::fs::read(path).map_err(CheckpointError::from)?;
        let ckpt: GcnCheckpoint = serde_json::from_slice(&bytes).map_err(CheckpointError::from)?;
        Self::from_checkpoint(&ckpt)
    }
}

const GCN_FORMAT: &str = "tagx-gcn";

/// On-disk form of a [`GcnModel`] (`*.gcn.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnCheckpoint {
    pub format: String,
    pub version: u32,
    pub trained_on: String,
    pub num_features: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub num_layers: usize,
    pub activation: Activation,
    pub tensors: Vec<EncodedTensor>,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `None` picks 512 for wide bag-of-words inputs and 64 otherwise.
    pub hidden_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 400,
            seed: 0,
            hidden_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn hidden_dim_for(&self, feature_dim: usize) -> usize {
        self.hidden_dim
            .unwrap_or(if feature_dim >= 1000 { 512 } else { 64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub accuracy: SplitAccuracy,
    pub hidden_dim: usize,
}

/// Fraction of `nodes` whose prediction equals their label; 0 for an empty set.
pub fn accuracy(predictions: &[usize], labels: &[usize], nodes: &[NodeId]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes
        .iter()
        .filter(|&&v| predictions[v] == labels[v])
        .count();
    hits as f64 / nodes.len() as f64
}

/// Full-batch Adam training on the graph's training split.
pub fn train_gcn(
    graph: &TextAttributedGraph,
    cfg: &TrainConfig,
) -> Result<(GcnModel, TrainReport), GcnError> {
    if !(cfg.learning_rate > 0.0) {
        return Err(GcnError::Config("learning_rate must be positive".into()));
    }
    let train = &graph.splits().train;
    if train.is_empty() {
        return Err(GcnError::NoTrainingNodes);
    }
    let hidden = cfg.hidden_dim_for(graph.feature_dim());
    let mut model = GcnModel::init(
        graph.feature_dim(),
        hidden,
        graph.num_classes(),
        cfg.seed,
        graph.name(),
    );
    let adj = NormalizedAdjacency::new(graph);
    let x = FeatureMatrix::new(graph.features());
    let mut opt = Adam::new(cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (loss, grads) = model.loss_and_grad(&adj, &x, graph.labels(), train)?;
        if !loss.is_finite() {
            return Err(GcnError::Diverged { epoch, loss });
        }
        losses.push(loss);
        opt.tick();
        for (slot, (w, g)) in model.weights.iter_mut().zip(&grads.weights).enumerate() {
            opt.update(
                slot,
                w.as_slice_mut().expect("standard layout"),
                g.as_slice().expect("standard layout"),
            );
        }
        for (slot, (b, g)) in model.biases.iter_mut().zip(&grads.biases).enumerate() {
            opt.update(
                3 + slot,
                b.as_slice_mut().expect("standard layout"),
                g.as_slice().expect("standard layout"),
            );
        }
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: train loss {loss:.4}");
        }
    }
    model.round_to_f32();

    let preds = model.forward_cached(&adj, &x)?.logits;
    let preds: Vec<usize> = preds.outer_iter().map(|r| argmax(r.iter())).collect();
    let s = graph.splits();
    let accuracy = SplitAccuracy {
        train: accuracy(&preds, graph.labels(), &s.train),
        val: accuracy(&preds, graph.labels(), &s.val),
        test: accuracy(&preds, graph.labels(), &s.test),
    };
    Ok((
        model,
        TrainReport {
            losses,
            accuracy,
            hidden_dim: hidden,
        },
    ))
}

/// Largest relative error between the analytic training-loss gradient and
/// central finite differences with step `eps`, over every weight and bias.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps entries
/// whose true gradient is zero from dominating through rounding noise.
pub fn gradient_check(
    model: &GcnModel,
    graph: &TextAttributedGraph,
    eps: f64,
) -> Result<f64, GcnError> {
    let (_, grads) = model.training_loss_and_grad(graph)?;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for layer in 0..3 {
        let cols = model.weights[layer].ncols();
        for idx in 0..model.weights[layer].len() {
            let at = [idx / cols, idx % cols];
            let orig = model.weights[layer][at];
            let numeric = central_difference(eps, |d| {
                probe.weights[layer][at] = orig + d;
                probe.training_loss_and_grad(graph).map(|(l, _)| l)
            })?;
            probe.weights[layer][at] = orig;
            worst = worst.max(rel_err(grads.weights[layer][at], numeric));
        }
        for i in 0..model.biases[layer].len() {
            let orig = model.biases[layer][i];
            let numeric = central_difference(eps, |d| {
                probe.biases[layer][i] = orig + d;
                probe.training_loss_and_grad(graph).map(|(l, _)| l)
            })?;
            probe.biases[layer][i] = orig;
            worst = worst.max(rel_err(grads.biases[layer][i], numeric));
        }
    }
    Ok(worst)
}

/// Five-point central difference `(-f(2e) + 8f(e) - 8f(-e) + f(-2e)) / 12e`,
/// where `loss_at(d)` evaluates the loss with one parameter shifted by `d`.
/// Its truncation error is O(e^4), so tiny gradient entries are still
/// resolved at a step of 1e-4.
pub(crate) fn central_difference<E>(
    eps: f64,
    mut loss_at: impl FnMut(f64) -> Result<f64, E>,
) -> Result<f64, E> {
    let (p2, p1, m1, m2) = (loss_at(2.0 * eps)?, loss_at(eps)?, loss_at(-eps)?, loss_at(-2.0 * eps)?);
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * eps))
}

pub(crate) fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphParts, Splits};
    use ndarray::array;

    fn graph(features: Array2<f64>, edges: &[(usize, usize)], labels: Vec<usize>, classes: usize) -> TextAttributedGraph {
        let n = features.nrows();
        TextAttributedGraph::from_parts(GraphParts {
            name: "g".into(),
            texts: vec![String::new(); n],
            features,
            edges: edges.to_vec(),
            labels,
            splits: Splits {
                train: (0..n).collect(),
                val: vec![],
                test: vec![],
            },
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
        })
        .unwrap()
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let g = graph(array![[1.0, 2.0]], &[], vec![1], 3);
        let m = GcnModel::zeros(2, 4, 3);
        let out = m.forward(&g).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
        assert_eq!(m.predict(&g, 0).unwrap(), 0);
    }

    #[test]
    fn normalized_adjacency_two_nodes() {
        let g = graph(array![[1.0, 0.0], [0.0, 1.0]], &[(0, 1)], vec![0, 0], 1);
        let a = NormalizedAdjacency::new(&g).to_dense();
        // both degrees are 2 with the self-loop, so every entry is 1/2
        for v in a.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_weights_give_normalized_feature_mix() {
        // path 0-1-2 with one-hot features: Â X = Â and I·I·I keeps it
        let g = graph(Array2::eye(3), &[(0, 1), (1, 2)], vec![0, 1, 2], 3);
        let mut m = GcnModel::zeros(3, 3, 3);
        m.weights = [Array2::eye(3), Array2::eye(3), Array2::eye(3)];
        let out = m.forward(&g).unwrap();
        // Â entries: d̃ = (2, 3, 2)
        let s = |a: f64, b: f64| 1.0 / (a * b).sqrt();
        let a_hat = array![
            [s(2., 2.), s(2., 3.), 0.0],
            [s(3., 2.), s(3., 3.), s(3., 2.)],
            [0.0, s(2., 3.), s(2., 2.)]
        ];
        let expected = a_hat.dot(&a_hat).dot(&a_hat);
        for (x, y) in out.logits.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_dim_mismatch_is_an_error() {
        let g = graph(array![[1.0, 2.0]], &[], vec![0], 1);
        let m = GcnModel::zeros(3, 2, 1);
        assert!(matches!(m.forward(&g), Err(GcnError::FeatureDim { .. })));
    }

    #[test]
    fn sparse_and_dense_features_agree() {
        let x = Array2::from_shape_fn((4, 20), |(i, j)| if j == i * 3 { 1.0 } else { 0.0 });
        let w = Array2::from_shape_fn((20, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let sparse = FeatureMatrix::new(&x);
        assert!(matches!(sparse, FeatureMatrix::Sparse { .. }));
        let dense = FeatureMatrix::Dense(x.clone());
        assert_eq!(sparse.matmul(&w), dense.matmul(&w));
        let g = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        assert_eq!(sparse.t_matmul(&g), dense.t_matmul(&g));
    }

    #[test]
    fn untrained_model_is_round_trippable() {
        let mut m = GcnModel::init(5, 4, 3, 7, "x");
        m.round_to_f32();
        let back = GcnModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let g = graph(Array2::eye(4), &[(0, 1), (2, 3)], vec![0, 0, 1, 1], 2);
        let cfg = TrainConfig {
            epochs: 0,
            hidden_dim: Some(4),
            ..TrainConfig::default()
        };
        let (m, report) = train_gcn(&g, &cfg).unwrap();
        let mut init = GcnModel::init(4, 4, 2, 0, "g");
        init.round_to_f32();
        assert_eq!(m, init);
        assert!(report.losses.is_empty());
    }
}
