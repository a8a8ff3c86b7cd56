use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_segments, BackendDescriptor, BackendError, GenerationConfig, LlmBackend};
use crate::graph::NodeId;
use crate::projector::mean_pool_normalize;
use crate::prompt::{HybridPrompt, Segment};

/// Deterministic stand-in for a language model.
///
/// Text embeddings are sums of hash-seeded Gaussian vectors, one pair per
/// distinct token: `g(token) + g("token#count")`, normalized. Generation
/// answers every candidate with `Support: YES` exactly when the cosine
/// between its payload vector and the target's reaches `theta`. Soft
/// payloads are compared through their normalized mean token, text payloads
/// through [`LlmBackend::embed_text`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub h: usize,
    pub seed: u64,
    pub theta: f64,
    /// Extra stanzas for these ids are appended to every response.
    pub hallucinate_ids: Vec<NodeId>,
    pub max_text_chars: usize,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend {
            h: 64,
            seed: 0,
            theta: 0.5,
            hallucinate_ids: Vec::new(),
            max_text_chars: 100_000,
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl MockBackend {
    pub fn new(h: usize, seed: u64) -> Self {
        MockBackend {
            h,
            seed,
            ..Self::default()
        }
    }

    /// Standard-normal vector seeded by `fnv1a(key) ^ seed`.
    pub fn key_vector(&self, key: &str) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()) ^ self.seed);
        Array1::from_shape_fn(self.h, |_| StandardNormal.sample(&mut rng))
    }

    fn payload_vector(&self, prompt: &HybridPrompt, node: NodeId) -> Result<Option<Array1<f64>>, BackendError> {
        match prompt.payload(node) {
            Some(Segment::Soft { matrix, .. }) => Ok(mean_pool_normalize(matrix).ok()),
            Some(Segment::Text(t)) => self.embed_text(t).map(Some),
            None => Err(BackendError::MalformedPrompt(format!("no payload for node {node}"))),
        }
    }
}

impl LlmBackend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            id: format!("mock-h{}-s{}", self.h, self.seed),
            h: self.h,
            max_segments: usize::MAX,
            max_concurrency: usize::MAX,
            deterministic: true,
        }
    }

    fn embed_text(&self, text: &str) -> Result<Array1<f64>, BackendError> {
        let text = if text.chars().count() > self.max_text_chars {
            warn!("truncating text of {} chars to {}", text.chars().count(), self.max_text_chars);
            let end = text
                .char_indices()
                .nth(self.max_text_chars)
                .map(|(i, _)| i)
                .unwrap_or(text.len());
            &text[..end]
        } else {
            text
        };
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
        let mut v = Array1::zeros(self.h);
        if counts.is_empty() {
            v += &self.key_vector("<empty>");
        }
        for (tok, count) in &counts {
            v += &self.key_vector(tok);
            v += &self.key_vector(&format!("{tok}#{count}"));
        }
        let norm = v.dot(&v).sqrt();
        if !(norm > 0.0) {
            return Err(BackendError::Protocol("zero text embedding".into()));
        }
        Ok(v / norm)
    }

    fn generate(&self, prompt: &HybridPrompt, cfg: &GenerationConfig) -> Result<String, BackendError> {
        cfg.validate()?;
        check_segments(prompt, &self.descriptor())?;
        let target = self.payload_vector(prompt, prompt.target)?.ok_or_else(|| {
            BackendError::MalformedPrompt(format!("degenerate soft prompt for target {}", prompt.target))
        })?;
        let noun = &prompt.entity_noun;
        let mut out = String::new();
        for &u in &prompt.candidates {
            let cos = self.payload_vector(prompt, u)?.map(|z| z.dot(&target));
            let verdict = match cos {
                Some(c) if c >= self.theta => "YES",
                _ => "NO",
            };
            let summary = match (prompt.payload(u), cos) {
                (Some(Segment::Text(t)), _) => {
                    let words: Vec<String> = tokenize(t).into_iter().take(6).collect();
                    format!("Keywords mention {}.", words.join(" "))
                }
                (_, Some(c)) => format!("Soft-prompt similarity to the target is {c:.3}."),
                _ => "The soft prompt carries no usable signal.".to_string(),
            };
            let _ = write!(out, "{noun} {u}:\nSummary: {summary}\nSupport: {verdict}\n\n");
        }
        for &id in &self.hallucinate_ids {
            let _ = write!(
                out,
                "{noun} {id}:\nSummary: A closely related item.\nSupport: YES\n\n"
            );
        }
        Ok(apply_limits(out.trim_end(), cfg))
    }
}

/// Cuts at the first stop sequence, then keeps at most `max_tokens`
/// whitespace-separated words.
fn apply_limits(text: &str, cfg: &GenerationConfig) -> String {
    let mut end = text.len();
    for stop in cfg.stop.iter().filter(|s| !s.is_empty()) {
        if let Some(i) = text.find(stop.as_str()) {
            end = end.min(i);
        }
    }
    let text = &text[..end];
    let mut words = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
            if words > cfg.max_tokens {
                return text[..i].trim_end().to_string();
            }
        }
    }
    text.to_string()
}
