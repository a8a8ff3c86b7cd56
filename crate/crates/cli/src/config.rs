//! Optional TOML run configuration. Every field is optional; command-line
//! flags win over the file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub gnn: GnnSection,
    pub projector: ProjectorSection,
    pub pipeline: PipelineSection,
    pub backend: BackendSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnSection {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorSection {
    pub k: Option<usize>,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub shared_temperature: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub tree_depth: Option<usize>,
    pub p: Option<f64>,
    pub max_tokens: Option<usize>,
    pub include_text_in_soft_mode: Option<bool>,
    pub count_tree_repetitions: Option<bool>,
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub url: Option<String>,
    pub h: Option<usize>,
    pub seed: Option<u64>,
    pub theta: Option<f64>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub methods: Option<Vec<String>>,
    pub num_targets: Option<usize>,
    pub random_seeds: Option<usize>,
    pub population: Option<String>,
    pub exclude_labels: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
