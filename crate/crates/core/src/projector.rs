//! Projection of GNN node embeddings into `k` soft-prompt tokens of the
//! language model's embedding width `h`.
//!
//! The projector is trained against two objectives over a batch of nodes:
//!
//! * context alignment, `-mean_v ⟨Z̄_v, t_v⟩`, pulling the normalized mean
//!   soft token toward the node's text embedding, and
//! * a contrastive cross-entropy `-(1/|B|) Σ_v Σ_u p^Φ_vu log p^Π_vu` where
//!   `p^Φ` is a `τ`-tempered softmax over cosine similarities of GNN
//!   embeddings and `p^Π` a softmax over inner products of pooled soft tokens.
//!
//! Both softmaxes include the `u = v` term. The mix is
//! `β · context + (1 - β) · contrastive`.

use std::path::Path;

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{find, CheckpointError, EncodedTensor};
use crate::gcn::{central_difference, rel_err, EmbeddingTable};
use crate::graph::NodeId;
use crate::optim::Adam;

/// Below this norm a pooled soft prompt has no direction.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("expected an input of dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("degenerate soft prompt: mean-pooled projection is zero")]
    DegenerateSoftPrompt,
    #[error("empty batch")]
    EmptyBatch,
    #[error("contrastive loss needs at least 2 nodes, got {0}")]
    BatchTooSmall(usize),
    #[error("batch sides differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("text embedding for node {node} has norm {norm}")]
    NotUnitNorm { node: usize, norm: f64 },
    #[error("projector training diverged at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorArch {
    /// `relu(f·W₁ + b₁)·W₂ + b₂`, hidden width `2m`.
    Mlp,
    /// `f·W`, no bias and no nonlinearity. Used for hand-checkable cases.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectorParams {
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
    Linear {
        w: Array2<f64>,
    },
}

/// The map `R^m → R^{k×h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorModel {
    pub m: usize,
    pub k: usize,
    pub h: usize,
    pub params: ProjectorParams,
}

struct BatchForward {
    hidden_pre: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
    out: Array2<f64>,
}

impl ProjectorModel {
    pub fn new_mlp(m: usize, k: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
        };
        let w1 = glorot(m, 2 * m);
        let w2 = glorot(2 * m, k * h);
        ProjectorModel {
            m,
            k,
            h,
            params: ProjectorParams::Mlp {
                w1,
                b1: Array1::zeros(2 * m),
                w2,
                b2: Array1::zeros(k * h),
            },
        }
    }

    /// Linear projector with weight `w` of shape `m × (k·h)`.
    pub fn linear(w: Array2<f64>, k: usize, h: usize) -> Result<Self, ProjectorError> {
        if w.ncols() != k * h {
            return Err(ProjectorError::DimMismatch {
                expected: k * h,
                got: w.ncols(),
            });
        }
        Ok(ProjectorModel {
            m: w.nrows(),
            k,
            h,
            params: ProjectorParams::Linear { w },
        })
    }

    pub fn zeros(arch: ProjectorArch, m: usize, k: usize, h: usize) -> Self {
        let params = match arch {
            ProjectorArch::Mlp => ProjectorParams::Mlp {
                w1: Array2::zeros((m, 2 * m)),
                b1: Array1::zeros(2 * m),
                w2: Array2::zeros((2 * m, k * h)),
                b2: Array1::zeros(k * h),
            },
            ProjectorArch::Linear => ProjectorParams::Linear {
                w: Array2::zeros((m, k * h)),
            },
        };
        ProjectorModel { m, k, h, params }
    }

    pub fn arch(&self) -> ProjectorArch {
        match self.params {
            ProjectorParams::Mlp { .. } => ProjectorArch::Mlp,
            ProjectorParams::Linear { .. } => ProjectorArch::Linear,
        }
    }

    fn forward_batch(&self, f: &Array2<f64>) -> BatchForward {
        match &self.params {
            ProjectorParams::Mlp { w1, b1, w2, b2 } => {
                let pre = f.dot(w1) + b1;
                let hidden = pre.mapv(|v| v.max(0.0));
                let out = hidden.dot(w2) + b2;
                BatchForward {
                    hidden_pre: Some(pre),
                    hidden: Some(hidden),
                    out,
                }
            }
            ProjectorParams::Linear { w } => BatchForward {
                hidden_pre: None,
                hidden: None,
                out: f.dot(w),
            },
        }
    }

    /// Soft prompt `Z` (`k × h`) for one GNN embedding.
    pub fn project(&self, f: ArrayView1<'_, f64>) -> Result<Array2<f64>, ProjectorError> {
        if f.len() != self.m {
            return Err(ProjectorError::DimMismatch {
                expected: self.m,
                got: f.len(),
            });
        }
        let batch = f.to_owned().insert_axis(Axis(0));
        let out = self.forward_batch(&batch).out;
        let z = out
            .into_shape_with_order((self.k, self.h))
            .expect("output width is k*h");
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ProjectorError::Config("non-finite projection".into()));
        }
        Ok(z)
    }

    fn tensors(&self) -> Vec<EncodedTensor> {
        match &self.params {
            ProjectorParams::Mlp { w1, b1, w2, b2 } => vec![
                EncodedTensor::from_matrix("W1", w1),
                EncodedTensor::from_vector("b1", b1),
                EncodedTensor::from_matrix("W2", w2),
                EncodedTensor::from_vector("b2", b2),
            ],
            ProjectorParams::Linear { w } => vec![EncodedTensor::from_matrix("W", w)],
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.params {
            ProjectorParams::Mlp { w1, b1, w2, b2 } => vec![
                w1.as_slice_mut().unwrap(),
                b1.as_slice_mut().unwrap(),
                w2.as_slice_mut().unwrap(),
                b2.as_slice_mut().unwrap(),
            ],
            ProjectorParams::Linear { w } => vec![w.as_slice_mut().unwrap()],
        }
    }

    pub fn round_to_f32(&mut self) {
        for p in self.param_slices_mut() {
            for v in p.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn to_checkpoint(&self, meta: &ProjectorTrainConfig) -> ProjectorCheckpoint {
        ProjectorCheckpoint {
            format: PROJ_FORMAT.into(),
            version: 1,
            m: self.m,
            k: self.k,
            h: self.h,
            beta: meta.beta,
            tau: meta.tau,
            seed: meta.seed,
            arch: self.arch(),
            tensors: self.tensors(),
        }
    }

    pub fn from_checkpoint(ckpt: &ProjectorCheckpoint) -> Result<Self, ProjectorError> {
        if ckpt.format != PROJ_FORMAT {
            return Err(CheckpointError::Format {
                found: ckpt.format.clone(),
                expected: PROJ_FORMAT.into(),
            }
            .into());
        }
        let mat = |n: &str| find(&ckpt.tensors, n).and_then(|t| t.to_matrix());
        let vec = |n: &str| find(&ckpt.tensors, n).and_then(|t| t.to_vector());
        let (m, k, h) = (ckpt.m, ckpt.k, ckpt.h);
        let params = match ckpt.arch {
            ProjectorArch::Mlp => {
                let p = ProjectorParams::Mlp {
                    w1: mat("W1")?,
                    b1: vec("b1")?,
                    w2: mat("W2")?,
                    b2: vec("b2")?,
                };
                if let ProjectorParams::Mlp { w1, b1, w2, b2 } = &p {
                    if w1.dim() != (m, 2 * m)
                        || b1.len() != 2 * m
                        || w2.dim() != (2 * m, k * h)
                        || b2.len() != k * h
                    {
                        return Err(ProjectorError::Config(
                            "checkpoint tensors disagree with (m, k, h)".into(),
                        ));
                    }
                }
                p
            }
            ProjectorArch::Linear => {
                let w = mat("W")?;
                if w.dim() != (m, k * h) {
                    return Err(ProjectorError::Config(
                        "checkpoint tensors disagree with (m, k, h)".into(),
                    ));
                }
                ProjectorParams::Linear { w }
            }
        };
        Ok(ProjectorModel { m, k, h, params })
    }

    pub fn save(&self, path: &Path, meta: &ProjectorTrainConfig) -> Result<(), ProjectorError> {
        let bytes =
            serde_json::to_vec_pretty(&self.to_checkpoint(meta)).map_err(CheckpointError::from)?;
        std::fs::write(path, bytes).map_err(CheckpointError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ProjectorCheckpoint), ProjectorError> {
        let bytes = std::fs::read(path).map_err(CheckpointError::from)?;
        let ckpt: ProjectorCheckpoint =
            serde_json::from_slice(&bytes).map_err(CheckpointError::from)?;
        Ok((Self::from_checkpoint(&ckpt)?, ckpt))
    }
}

const PROJ_FORMAT: &str = "tagx-projector";

/// On-disk form of a projector (`*.proj.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorCheckpoint {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub k: usize,
    pub h: usize,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
    pub arch: ProjectorArch,
    pub tensors: Vec<EncodedTensor>,
}

/// `rowmean(Z) / ‖rowmean(Z)‖₂`
pub fn mean_pool_normalize(z: &Array2<f64>) -> Result<Array1<f64>, ProjectorError> {
    if z.nrows() == 0 {
        return Err(ProjectorError::DegenerateSoftPrompt);
    }
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let norm = mean.dot(&mean).sqrt();
    if !norm.is_finite() || norm <= DEGENERATE_NORM {
        return Err(ProjectorError::DegenerateSoftPrompt);
    }
    Ok(mean / norm)
}

/// Per-node unit-norm text embeddings from the language model backend.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    pub rows: Array2<f64>,
    pub backend: String,
}

impl TextEmbeddingTable {
    pub fn new(rows: Array2<f64>, backend: &str) -> Result<Self, ProjectorError> {
        for (node, r) in rows.outer_iter().enumerate() {
            let norm = r.dot(&r).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(ProjectorError::NotUnitNorm { node, norm });
            }
        }
        Ok(TextEmbeddingTable {
            rows,
            backend: backend.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// `-mean_v ⟨Z̄_v, t_v⟩` over the rows of the two matrices.
pub fn context_loss(zbar: &Array2<f64>, text: &Array2<f64>) -> Result<f64, ProjectorError> {
    if zbar.nrows() == 0 {
        return Err(ProjectorError::EmptyBatch);
    }
    if zbar.dim() != text.dim() {
        return Err(ProjectorError::LengthMismatch(zbar.nrows(), text.nrows()));
    }
    let total: f64 = zbar
        .outer_iter()
        .zip(text.outer_iter())
        .map(|(a, b)| a.dot(&b))
        .sum();
    Ok(-total / zbar.nrows() as f64)
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut r in out.outer_iter_mut() {
        let n = r.dot(&r).sqrt();
        // an all-zero embedding has cosine 0 with everything
        if n > 0.0 {
            r /= n;
        }
    }
    out
}

fn row_softmax(mut logits: Array2<f64>) -> Array2<f64> {
    for mut r in logits.outer_iter_mut() {
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - max).exp());
        let sum = r.sum();
        r /= sum;
    }
    logits
}

/// `p^Φ`: softmax over `cos(f_v, f_u) / τ`, self-term included.
pub fn target_distribution(f: &Array2<f64>, tau: f64) -> Array2<f64> {
    let u = unit_rows(f);
    row_softmax(u.dot(&u.t()) / tau)
}

/// `p^Π`: softmax over `⟨Z̄_v, Z̄_u⟩ / temperature`, self-term included.
pub fn projected_distribution(zbar: &Array2<f64>, temperature: f64) -> Array2<f64> {
    row_softmax(zbar.dot(&zbar.t()) / temperature)
}

fn check_contrastive(zbar: &Array2<f64>, f: &Array2<f64>, tau: f64) -> Result<(), ProjectorError> {
    if !(tau > 0.0) {
        return Err(ProjectorError::Config(format!("tau must be positive, got {tau}")));
    }
    if zbar.nrows() != f.nrows() {
        return Err(ProjectorError::LengthMismatch(zbar.nrows(), f.nrows()));
    }
    if zbar.nrows() < 2 {
        return Err(ProjectorError::BatchTooSmall(zbar.nrows()));
    }
    Ok(())
}

/// Contrastive cross-entropy with `p^Π` at temperature 1.
pub fn contrastive_loss(zbar: &Array2<f64>, f: &Array2<f64>, tau: f64) -> Result<f64, ProjectorError> {
    contrastive_loss_with(zbar, f, tau, 1.0)
}

/// Contrastive cross-entropy with an explicit temperature for `p^Π`.
pub fn contrastive_loss_with(
    zbar: &Array2<f64>,
    f: &Array2<f64>,
    tau: f64,
    projected_temperature: f64,
) -> Result<f64, ProjectorError> {
    check_contrastive(zbar, f, tau)?;
    let p_phi = target_distribution(f, tau);
    let log_pi = log_softmax_rows(&(zbar.dot(&zbar.t()) / projected_temperature));
    Ok(-(&p_phi * &log_pi).sum() / zbar.nrows() as f64)
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut r in out.outer_iter_mut() {
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        r.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectorTrainConfig {
    /// Soft tokens per node.
    pub k: usize,
    pub beta: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Apply `tau` to `p^Π` as well. Off by default.
    pub shared_temperature: bool,
    pub arch: ProjectorArch,
    /// Nodes used when scoring epochs for best-checkpoint selection; larger
    /// populations are subsampled with `seed`.
    pub eval_cap: usize,
}

impl Default for ProjectorTrainConfig {
    fn default() -> Self {
        ProjectorTrainConfig {
            k: 4,
            beta: 0.5,
            tau: 0.1,
            learning_rate: 1e-3,
            epochs: 200,
            batch: 64,
            seed: 0,
            shared_temperature: false,
            arch: ProjectorArch::Mlp,
            eval_cap: 4096,
        }
    }
}

impl ProjectorTrainConfig {
    pub fn validate(&self) -> Result<(), ProjectorError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(ProjectorError::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.tau > 0.0) {
            return Err(ProjectorError::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ProjectorError::Config("learning_rate must be positive".into()));
        }
        if self.k == 0 || self.batch == 0 {
            return Err(ProjectorError::Config("k and batch must be positive".into()));
        }
        Ok(())
    }

    fn projected_temperature(&self) -> f64 {
        if self.shared_temperature {
            self.tau
        } else {
            1.0
        }
    }
}

/// The three objective values on some node population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub context: f64,
    pub contrast: f64,
    pub total: f64,
}

/// Objective value and gradient for one batch. Rows whose pooled projection
/// is degenerate are dropped first; their indices are returned.
pub struct BatchObjective {
    pub loss: LossBreakdown,
    pub grads: Vec<Array2<f64>>,
    pub skipped: Vec<usize>,
}

/// Evaluates `β·context + (1-β)·contrast` and its gradient with respect to
/// every projector parameter. Gradients come back in the order of the
/// parameter tensors (`W1, b1, W2, b2` or `W`), biases as `1×n` matrices.
pub fn objective(
    model: &ProjectorModel,
    f: &Array2<f64>,
    text: &Array2<f64>,
    cfg: &ProjectorTrainConfig,
) -> Result<BatchObjective, ProjectorError> {
    if f.nrows() != text.nrows() {
        return Err(ProjectorError::LengthMismatch(f.nrows(), text.nrows()));
    }
    if f.ncols() != model.m {
        return Err(ProjectorError::DimMismatch {
            expected: model.m,
            got: f.ncols(),
        });
    }
    let (k, h) = (model.k, model.h);
    let fwd = model.forward_batch(f);

    // mean over the k token blocks of each output row
    let mut pooled = Array2::zeros((f.nrows(), h));
    for i in 0..k {
        pooled += &fwd.out.slice(s![.., i * h..(i + 1) * h]);
    }
    pooled /= k as f64;
    let norms: Vec<f64> = pooled.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let keep: Vec<usize> = (0..f.nrows())
        .filter(|&i| norms[i].is_finite() && norms[i] > DEGENERATE_NORM)
        .collect();
    let skipped: Vec<usize> = (0..f.nrows()).filter(|i| !keep.contains(i)).collect();
    if !skipped.is_empty() {
        warn!("skipping {} node(s) with a degenerate soft prompt", skipped.len());
    }
    if keep.is_empty() {
        return Err(ProjectorError::EmptyBatch);
    }
    let n = keep.len() as f64;
    let zbar = Array2::from_shape_fn((keep.len(), h), |(r, j)| pooled[[keep[r], j]] / norms[keep[r]]);
    let f_kept = f.select(Axis(0), &keep);
    let t_kept = text.select(Axis(0), &keep);

    let beta = cfg.beta;
    let context = context_loss(&zbar, &t_kept)?;
    let mut d_zbar = &t_kept * (-beta / n);

    let contrast = if beta < 1.0 {
        check_contrastive(&zbar, &f_kept, cfg.tau)?;
        let temp = cfg.projected_temperature();
        let p_phi = target_distribution(&f_kept, cfg.tau);
        let logits = zbar.dot(&zbar.t()) / temp;
        let log_pi = log_softmax_rows(&logits);
        let value = -(&p_phi * &log_pi).sum() / n;
        let p_pi = log_pi.mapv(f64::exp);
        let g = (&p_pi - &p_phi) / n;
        let sym = &g + &g.t();
        d_zbar = d_zbar + sym.dot(&zbar) * ((1.0 - beta) / temp);
        value
    } else if keep.len() >= 2 {
        contrastive_loss_with(&zbar, &f_kept, cfg.tau, cfg.projected_temperature())?
    } else {
        0.0
    };
    let total = beta * context + (1.0 - beta) * contrast;

    // back through normalization and pooling
    let mut d_out = Array2::zeros(fwd.out.raw_dim());
    for (r, &row) in keep.iter().enumerate() {
        let z = zbar.row(r);
        let g = d_zbar.row(r);
        let radial = g.dot(&z);
        let d_pooled = (&g - &(&z * radial)) / norms[row];
        for i in 0..k {
            let mut block = d_out.slice_mut(s![row, i * h..(i + 1) * h]);
            block.scaled_add(1.0 / k as f64, &d_pooled);
        }
    }

    let grads = match &model.params {
        ProjectorParams::Linear { .. } => vec![f.t().dot(&d_out)],
        ProjectorParams::Mlp { w2, .. } => {
            let hidden = fwd.hidden.as_ref().expect("mlp hidden");
            let pre = fwd.hidden_pre.as_ref().expect("mlp pre-activation");
            let d_w2 = hidden.t().dot(&d_out);
            let d_b2 = d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut d_hidden = d_out.dot(&w2.t());
            d_hidden.zip_mut_with(pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            let d_w1 = f.t().dot(&d_hidden);
            let d_b1 = d_hidden.sum_axis(Axis(0)).insert_axis(Axis(0));
            vec![d_w1, d_b1, d_w2, d_b2]
        }
    };

    Ok(BatchObjective {
        loss: LossBreakdown {
            context,
            contrast,
            total,
        },
        grads,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectorTrainReport {
    pub initial: LossBreakdown,
    pub best: LossBreakdown,
    pub best_epoch: usize,
    /// Full-population objective after each epoch.
    pub history: Vec<LossBreakdown>,
    pub skipped_samples: usize,
}

fn population_loss(
    model: &ProjectorModel,
    f: &Array2<f64>,
    text: &Array2<f64>,
    cfg: &ProjectorTrainConfig,
) -> Result<LossBreakdown, ProjectorError> {
    Ok(objective(model, f, text, cfg)?.loss)
}

/// Trains a projector on the rows `nodes` of the two tables and returns the
/// parameters with the lowest objective on the evaluation population.
pub fn train_projector(
    emb: &EmbeddingTable,
    texts: &TextEmbeddingTable,
    nodes: &[NodeId],
    cfg: &ProjectorTrainConfig,
) -> Result<(ProjectorModel, ProjectorTrainReport), ProjectorError> {
    cfg.validate()?;
    if emb.rows.nrows() != texts.rows.nrows() {
        return Err(ProjectorError::LengthMismatch(emb.rows.nrows(), texts.rows.nrows()));
    }
    if nodes.is_empty() {
        return Err(ProjectorError::EmptyBatch);
    }
    let (m, h) = (emb.dim(), texts.dim());
    let mut model = match cfg.arch {
        ProjectorArch::Mlp => ProjectorModel::new_mlp(m, cfg.k, h, cfg.seed),
        ProjectorArch::Linear => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let limit = (6.0 / (m + cfg.k * h) as f64).sqrt();
            let w = Array2::from_shape_fn((m, cfg.k * h), |_| rng.random_range(-limit..limit));
            ProjectorModel::linear(w, cfg.k, h)?
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut eval_nodes = nodes.to_vec();
    if eval_nodes.len() > cfg.eval_cap {
        eval_nodes.shuffle(&mut rng);
        eval_nodes.truncate(cfg.eval_cap);
        eval_nodes.sort_unstable();
    }
    let eval_f = emb.rows.select(Axis(0), &eval_nodes);
    let eval_t = texts.rows.select(Axis(0), &eval_nodes);

    let initial = population_loss(&model, &eval_f, &eval_t, cfg)?;
    let mut best = (initial, 0usize, model.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order = nodes.to_vec();
    let mut skipped_samples = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < 2 && cfg.beta < 1.0 {
                continue;
            }
            let bf = emb.rows.select(Axis(0), chunk);
            let bt = texts.rows.select(Axis(0), chunk);
            let step = match objective(&model, &bf, &bt, cfg) {
                Ok(step) => step,
                Err(ProjectorError::EmptyBatch | ProjectorError::BatchTooSmall(_)) => {
                    skipped_samples += chunk.len();
                    continue;
                }
                Err(e) => return Err(e),
            };
            skipped_samples += step.skipped.len();
            if !step.loss.total.is_finite() {
                return Err(ProjectorError::Diverged(epoch));
            }
            opt.tick();
            for (slot, (p, g)) in model.param_slices_mut().into_iter().zip(&step.grads).enumerate() {
                opt.update(slot, p, g.as_slice().expect("standard layout"));
            }
        }
        let loss = population_loss(&model, &eval_f, &eval_t, cfg)?;
        if !loss.total.is_finite() {
            return Err(ProjectorError::Diverged(epoch));
        }
        if loss.total < best.0.total {
            best = (loss, epoch, model.clone());
        }
        history.push(loss);
    }

    let (best_loss, best_epoch, mut model) = best;
    model.round_to_f32();
    Ok((
        model,
        ProjectorTrainReport {
            initial,
            best: best_loss,
            best_epoch,
            history,
            skipped_samples,
        },
    ))
}

/// Largest relative error between analytic and five-point central-difference
/// gradients of the mixed objective, over every projector parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    model: &ProjectorModel,
    f: &Array2<f64>,
    text: &Array2<f64>,
    cfg: &ProjectorTrainConfig,
    eps: f64,
) -> Result<f64, ProjectorError> {
    let analytic = objective(model, f, text, cfg)?.grads;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = probe.param_slices_mut()[t][i];
            let numeric = central_difference(eps, |d| {
                probe.param_slices_mut()[t][i] = orig + d;
                objective(&probe, f, text, cfg).map(|o| o.loss.total)
            })?;
            probe.param_slices_mut()[t][i] = orig;
            let a = grad.as_slice().expect("standard layout")[i];
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}
