//! From a language model's verdicts to an explanation subgraph.
//!
//! The response is parsed into a ternary label per candidate (support,
//! oppose, unmentioned). Supporters are kept, opponents dropped, and
//! optionally a random subset of unmentioned nodes is added so that every
//! explanation covers the same fraction `p` of its computation tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use log::warn;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{GenerationConfig, LlmBackend};
use crate::gcn::{ForwardOutput, GcnModel};
use crate::graph::{NodeId, TextAttributedGraph};
use crate::projector::{mean_pool_normalize, ProjectorModel};
use crate::prompt::{build_prompt_for, PromptMode, PromptOptions, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Tree,
    Project,
    Prompt,
    Generate,
    Refine,
    Subgraph,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Tree => "computation-tree",
            Stage::Project => "projection",
            Stage::Prompt => "prompt",
            Stage::Generate => "generation",
            Stage::Refine => "refinement",
            Stage::Subgraph => "subgraph",
        })
    }
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("p must lie in (0, 1], got {0}")]
    InvalidP(f64),
    #[error("{stage} stage failed")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn at<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> ExplainError {
    move |e| ExplainError::Stage {
        stage,
        source: Box::new(e),
    }
}

/// Parsed verdicts, keyed by candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChiMap {
    /// `+1` support, `-1` oppose, `0` not mentioned.
    pub values: BTreeMap<NodeId, i8>,
    /// Line of the response where each decided verdict's stanza begins.
    pub provenance: BTreeMap<NodeId, usize>,
    /// Ids the response named that were not offered, ascending.
    pub hallucinations: Vec<NodeId>,
}

impl ChiMap {
    pub fn partition(&self) -> (BTreeSet<NodeId>, BTreeSet<NodeId>, BTreeSet<NodeId>) {
        let pick = |want: i8| {
            self.values
                .iter()
                .filter(|(_, &c)| c == want)
                .map(|(&u, _)| u)
                .collect::<BTreeSet<_>>()
        };
        (pick(1), pick(-1), pick(0))
    }
}

/// Reads `<noun> <id>:` stanzas and their `Support: YES|NO` lines.
///
/// Markdown decoration around headers and verdicts is tolerated. The first
/// decided stanza for an id wins. Mentions of `target` are ignored; any
/// other id outside `candidates` is recorded as a hallucination.
pub fn parse_response(
    text: &str,
    candidates: &BTreeSet<NodeId>,
    target: NodeId,
    entity_noun: &str,
) -> ChiMap {
    let header = Regex::new(&format!(
        r"(?mi)^[\s>*\-#•]*(?:\d+[.)]\s*)?\**\s*{}\s+(?:id\s*)?#?(\d+)\s*\**\s*:",
        regex::escape(entity_noun.trim())
    ))
    .expect("valid header pattern");
    let support = Regex::new(r"(?i)support\s*\**\s*:\s*\**\s*(yes|no)\b").expect("valid support pattern");

    let mut chi = ChiMap {
        values: candidates.iter().map(|&u| (u, 0)).collect(),
        ..ChiMap::default()
    };
    let mut hallucinated = BTreeSet::new();
    let headers: Vec<_> = header.captures_iter(text).collect();
    for (i, cap) in headers.iter().enumerate() {
        let whole = cap.get(0).expect("match");
        let body_end = headers.get(i + 1).map_or(text.len(), |c| c.get(0).unwrap().start());
        let body = &text[whole.end()..body_end];
        let line = text[..cap.get(1).unwrap().start()].matches('\n').count();
        let id: NodeId = match cap[1].parse() {
            Ok(id) => id,
            Err(_) => {
                warn!("response line {line}: id {} is out of range", &cap[1]);
                continue;
            }
        };
        if id == target {
            continue;
        }
        if !candidates.contains(&id) {
            hallucinated.insert(id);
            continue;
        }
        if chi.provenance.contains_key(&id) {
            continue;
        }
        match support.captures(body) {
            Some(s) => {
                let yes = s[1].eq_ignore_ascii_case("yes");
                chi.values.insert(id, if yes { 1 } else { -1 });
                chi.provenance.insert(id, line);
            }
            None => warn!("response line {line}: stanza for {id} has no Support verdict"),
        }
    }
    chi.hallucinations = hallucinated.into_iter().collect();
    chi
}

/// Number of neutral nodes to add: `min(|S0|, max(0, round(p·T) - |S+| - 1))`,
/// the `- 1` accounting for the target, which is always included.
pub fn padding_count(num_plus: usize, num_zero: usize, tree_size: usize, p: f64) -> usize {
    let want = (p * tree_size as f64).round() as i64 - num_plus as i64 - 1;
    (want.max(0) as usize).min(num_zero)
}

/// `S+` plus a uniform sample of [`padding_count`] nodes from `S0`. The
/// target is not added here.
pub fn refine(
    s_plus: &BTreeSet<NodeId>,
    s_zero: &BTreeSet<NodeId>,
    tree_size: usize,
    p: f64,
    seed: u64,
) -> Result<BTreeSet<NodeId>, ExplainError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(ExplainError::InvalidP(p));
    }
    let g = padding_count(s_plus.len(), s_zero.len(), tree_size, p);
    let pool: Vec<NodeId> = s_zero.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s_plus.clone();
    out.extend(pool.choose_multiple(&mut rng, g).copied());
    Ok(out)
}

/// The three pipeline variants compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMode {
    /// Words only, with neutral padding.
    LlmText,
    /// Soft prompts, supporters only.
    LlmPr,
    /// Soft prompts with neutral padding.
    LlmPrPo,
}

impl ExplainMode {
    pub fn prompt_mode(self) -> PromptMode {
        match self {
            ExplainMode::LlmText => PromptMode::Text,
            ExplainMode::LlmPr | ExplainMode::LlmPrPo => PromptMode::Soft,
        }
    }

    pub fn post_processing(self) -> bool {
        !matches!(self, ExplainMode::LlmPr)
    }

    pub fn name(self) -> &'static str {
        match self {
            ExplainMode::LlmText => "llm_text",
            ExplainMode::LlmPr => "llm_pr",
            ExplainMode::LlmPrPo => "llm_pr_po",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tree_depth: usize,
    pub mode: ExplainMode,
    pub p: f64,
    pub seed: u64,
    pub generation: GenerationConfig,
    pub include_text_in_soft_mode: bool,
    /// Measure tree size with repeated walks instead of unique nodes.
    pub count_tree_repetitions: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tree_depth: 2,
            mode: ExplainMode::LlmPrPo,
            p: 0.5,
            seed: 0,
            generation: GenerationConfig::default(),
            include_text_in_soft_mode: false,
            count_tree_repetitions: false,
        }
    }
}

/// Shared read-only state for explaining many nodes of one graph.
pub struct ExplainContext<'a> {
    pub graph: &'a TextAttributedGraph,
    pub gnn: &'a GcnModel,
    pub forward: ForwardOutput,
    pub predictions: Vec<usize>,
    pub projector: Option<&'a ProjectorModel>,
    pub backend: &'a dyn LlmBackend,
    pub template: &'a PromptTemplate,
}

impl<'a> ExplainContext<'a> {
    pub fn new(
        graph: &'a TextAttributedGraph,
        gnn: &'a GcnModel,
        projector: Option<&'a ProjectorModel>,
        backend: &'a dyn LlmBackend,
        template: &'a PromptTemplate,
    ) -> Result<Self, ExplainError> {
        let forward = gnn.forward(graph).map_err(at(Stage::Tree))?;
        let predictions = forward.predictions();
        Ok(ExplainContext {
            graph,
            gnn,
            forward,
            predictions,
            projector,
            backend,
            template,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub target: NodeId,
    pub chi: ChiMap,
    pub s_plus: BTreeSet<NodeId>,
    pub s_minus: BTreeSet<NodeId>,
    pub s_zero: BTreeSet<NodeId>,
    /// Final node set, target included.
    pub s_v: BTreeSet<NodeId>,
    /// `G[S_v]`, local ids in ascending original order.
    pub subgraph: TextAttributedGraph,
    pub raw_response: String,
    pub dropped: Vec<NodeId>,
    pub mode: ExplainMode,
    pub p: f64,
    pub tree_size: usize,
    /// Candidates left out of the prompt (degenerate soft prompt or no text).
    pub excluded: Vec<NodeId>,
}

fn node_seed(seed: u64, v: NodeId) -> u64 {
    seed ^ (v as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Explains the prediction for `v`.
pub fn explain_node(ctx: &ExplainContext<'_>, v: NodeId, cfg: &PipelineConfig) -> Result<Explanation, ExplainError> {
    if !(cfg.p > 0.0 && cfg.p <= 1.0) {
        return Err(ExplainError::InvalidP(cfg.p));
    }
    let graph = ctx.graph;
    let tree = graph
        .computation_tree(v, cfg.tree_depth)
        .map_err(at(Stage::Tree))?;
    let mut candidates = tree.candidates();
    let mut excluded = Vec::new();
    let mode = cfg.mode.prompt_mode();

    let mut soft = BTreeMap::new();
    match mode {
        PromptMode::Soft => {
            let proj = ctx.projector.ok_or_else(|| ExplainError::Stage {
                stage: Stage::Project,
                source: "soft-prompt modes need a projector".into(),
            })?;
            for u in std::iter::once(v).chain(candidates.iter().copied()) {
                let z = proj
                    .project(ctx.forward.embeddings.row(u))
                    .map_err(at(Stage::Project))?;
                if let Err(e) = mean_pool_normalize(&z) {
                    if u == v {
                        return Err(at(Stage::Project)(e));
                    }
                    warn!("node {v}: excluding candidate {u}: {e}");
                    excluded.push(u);
                    continue;
                }
                soft.insert(u, z);
            }
        }
        PromptMode::Text => {
            for &u in &candidates {
                if graph.text(u).trim().is_empty() {
                    warn!("node {v}: excluding candidate {u} with empty text");
                    excluded.push(u);
                }
            }
        }
    }
    candidates.retain(|u| !excluded.contains(u));

    let prompt = build_prompt_for(
        graph,
        &tree,
        &candidates,
        &soft,
        ctx.template,
        mode,
        ctx.predictions[v],
        PromptOptions {
            include_text_in_soft_mode: cfg.include_text_in_soft_mode,
        },
    )
    .map_err(at(Stage::Prompt))?;

    let raw_response = ctx
        .backend
        .generate(&prompt, &cfg.generation)
        .map_err(at(Stage::Generate))?;
    let offered: BTreeSet<NodeId> = prompt.candidates.iter().copied().collect();
    let chi = parse_response(&raw_response, &offered, v, &prompt.entity_noun);
    let (s_plus, s_minus, s_zero) = chi.partition();

    let tree_size = if cfg.count_tree_repetitions {
        tree.len()
    } else {
        tree.unique_nodes.len()
    };
    let mut s_v = if cfg.mode.post_processing() {
        refine(&s_plus, &s_zero, tree_size, cfg.p, node_seed(cfg.seed, v))?
    } else {
        s_plus.clone()
    };
    s_v.insert(v);
    let (subgraph, _) = graph.induced_subgraph(&s_v).map_err(at(Stage::Subgraph))?;

    Ok(Explanation {
        target: v,
        dropped: chi.hallucinations.clone(),
        chi,
        s_plus,
        s_minus,
        s_zero,
        s_v,
        subgraph,
        raw_response,
        mode: cfg.mode,
        p: cfg.p,
        tree_size,
        excluded,
    })
}

/// Serializable form written as `<node>.expl.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub target: NodeId,
    pub chi: BTreeMap<NodeId, i8>,
    #[serde(rename = "S_plus")]
    pub s_plus: Vec<NodeId>,
    #[serde(rename = "S_minus")]
    pub s_minus: Vec<NodeId>,
    #[serde(rename = "S_zero")]
    pub s_zero: Vec<NodeId>,
    #[serde(rename = "S_v")]
    pub s_v: Vec<NodeId>,
    pub dropped: Vec<NodeId>,
    pub raw_response: String,
    pub mode: ExplainMode,
    pub p: f64,
}

impl From<&Explanation> for ExplanationRecord {
    fn from(e: &Explanation) -> Self {
        ExplanationRecord {
            target: e.target,
            chi: e.chi.values.clone(),
            s_plus: e.s_plus.iter().copied().collect(),
            s_minus: e.s_minus.iter().copied().collect(),
            s_zero: e.s_zero.iter().copied().collect(),
            s_v: e.s_v.iter().copied().collect(),
            dropped: e.dropped.clone(),
            raw_response: e.raw_response.clone(),
            mode: e.mode,
            p: e.p,
        }
    }
}

/// Graphviz rendering of `G[S_v]`: target double-circled, supporters green,
/// padded neutral nodes grey. Node labels are original ids.
pub fn to_dot(graph: &TextAttributedGraph, record: &ExplanationRecord) -> String {
    let members: BTreeSet<NodeId> = record.s_v.iter().copied().collect();
    let plus: BTreeSet<NodeId> = record.s_plus.iter().copied().collect();
    let mut out = format!("graph explanation_{} {{\n", record.target);
    for &u in &members {
        let style = if u == record.target {
            "shape=doublecircle"
        } else if plus.contains(&u) {
            "shape=circle, style=filled, fillcolor=palegreen"
        } else {
            "shape=circle, style=filled, fillcolor=lightgrey"
        };
        let _ = writeln!(out, "  {u} [{style}];");
    }
    for &(a, b) in graph.edges() {
        if members.contains(&a) && members.contains(&b) {
            let _ = writeln!(out, "  {a} -- {b};");
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[NodeId]) -> BTreeSet<NodeId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn parses_markdown_decorated_stanzas() {
        let text = "**Product 129:**\nSummary: shoes.\nSupport: **YES**\n\n\
                    - Product 130:\nSummary: pans.\n**Support:** NO\n\
                    Product 131:\nSummary: nothing said\n";
        let chi = parse_response(text, &set(&[129, 130, 131, 132]), 0, "Product");
        assert_eq!(chi.values[&129], 1);
        assert_eq!(chi.values[&130], -1);
        assert_eq!(chi.values[&131], 0);
        assert_eq!(chi.values[&132], 0);
        assert_eq!(chi.provenance[&129], 0);
        assert_eq!(chi.provenance[&130], 4);
    }

    #[test]
    fn first_verdict_wins_and_target_is_ignored() {
        let text = "Node 2:\nSupport: NO\nNode 2:\nSupport: YES\nNode 0:\nSupport: YES\n";
        let chi = parse_response(text, &set(&[2]), 0, "Node");
        assert_eq!(chi.values[&2], -1);
        assert!(chi.hallucinations.is_empty());
    }

    #[test]
    fn huge_ids_are_skipped() {
        let text = "Node 99999999999999999999999:\nSupport: YES\n";
        let chi = parse_response(text, &set(&[1]), 0, "Node");
        assert!(chi.hallucinations.is_empty());
        assert_eq!(chi.values[&1], 0);
    }

    #[test]
    fn refine_rejects_bad_p() {
        assert!(refine(&set(&[]), &set(&[1]), 4, 0.0, 0).is_err());
        assert!(refine(&set(&[]), &set(&[1]), 4, 1.5, 0).is_err());
        assert!(refine(&set(&[]), &set(&[1]), 4, f64::NAN, 0).is_err());
    }

    #[test]
    fn ablation_flags() {
        assert_eq!(ExplainMode::LlmText.prompt_mode(), PromptMode::Text);
        assert!(!ExplainMode::LlmPr.post_processing());
        assert!(ExplainMode::LlmPrPo.post_processing());
        assert!(ExplainMode::LlmText.post_processing());
    }
}
