use std::time::Duration;

use log::warn;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{check_segments, BackendDescriptor, BackendError, GenerationConfig, LlmBackend};
use crate::prompt::{HybridPrompt, Segment};

/// HTTP/JSON client for an out-of-process model server.
///
/// Endpoints: `GET /descriptor`, `POST /embed {text}` returning `{vector}`,
/// and `POST /generate {segments, max_tokens, stop}` returning `{text}`.
/// Each request is retried once before the backend is reported unavailable.
#[derive(Debug, Clone)]
pub struct BridgeClient {
    base_url: String,
    agent: Agent,
    descriptor: BackendDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WireSegment {
    Text { content: String },
    Soft { matrix: Vec<Vec<f32>> },
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    segments: Vec<WireSegment>,
    max_tokens: usize,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

impl BridgeClient {
    /// Connects to `base_url` and fetches the server's descriptor.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let base_url = base_url.trim_end_matches('/').to_string();
        let url = format!("{base_url}/descriptor");
        let descriptor: BackendDescriptor = retry_once("descriptor", || {
            agent.get(&url).call()?.body_mut().read_json()
        })?;
        if descriptor.h == 0 || descriptor.max_concurrency == 0 {
            return Err(BackendError::Protocol(format!(
                "descriptor has h={} and max_concurrency={}",
                descriptor.h, descriptor.max_concurrency
            )));
        }
        Ok(BridgeClient {
            base_url,
            agent,
            descriptor,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

fn retry_once<T>(
    what: &str,
    mut call: impl FnMut() -> Result<T, ureq::Error>,
) -> Result<T, BackendError> {
    match call() {
        Ok(v) => Ok(v),
        Err(first) => {
            warn!("{what} request failed ({first}); retrying once");
            call().map_err(|e| BackendError::Unavailable(format!("{what}: {e}")))
        }
    }
}

/// Wire form of a prompt: matrices as row-major `f32` arrays.
pub fn wire_segments(prompt: &HybridPrompt) -> Vec<WireSegment> {
    prompt
        .segments
        .iter()
        .map(|s| match s {
            Segment::Text(t) => WireSegment::Text { content: t.clone() },
            Segment::Soft { matrix, .. } => WireSegment::Soft {
                matrix: matrix
                    .outer_iter()
                    .map(|r| r.iter().map(|&v| v as f32).collect())
                    .collect(),
            },
        })
        .collect()
}

impl LlmBackend for BridgeClient {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn embed_text(&self, text: &str) -> Result<Array1<f64>, BackendError> {
        let url = format!("{}/embed", self.base_url);
        let resp: EmbedResponse = retry_once("embed", || {
            self.agent
                .post(&url)
                .send_json(EmbedRequest { text })?
                .body_mut()
                .read_json()
        })?;
        if resp.vector.len() != self.descriptor.h {
            return Err(BackendError::Protocol(format!(
                "embedding has {} entries, descriptor says h={}",
                resp.vector.len(),
                self.descriptor.h
            )));
        }
        let v = Array1::from_iter(resp.vector.iter().map(|&x| x as f64));
        let norm = v.dot(&v).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(BackendError::Protocol("embedding is zero or non-finite".into()));
        }
        // f32 transport loses a little precision; restore the unit norm
        Ok(v / norm)
    }

    fn generate(&self, prompt: &HybridPrompt, cfg: &GenerationConfig) -> Result<String, BackendError> {
        cfg.validate()?;
        check_segments(prompt, &self.descriptor)?;
        let url = format!("{}/generate", self.base_url);
        let segments = wire_segments(prompt);
        let resp: GenerateResponse = retry_once("generate", || {
            self.agent
                .post(&url)
                .send_json(GenerateRequest {
                    segments: segments.clone(),
                    max_tokens: cfg.max_tokens,
                    stop: &cfg.stop,
                })?
                .body_mut()
                .read_json()
        })?;
        Ok(resp.text)
    }
}
