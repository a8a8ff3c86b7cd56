//! Hybrid prompts: instruction text interleaved with per-node soft-prompt
//! matrices (or node text, in text mode).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputationTree, NodeId, TextAttributedGraph};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template: {0}")]
    Template(String),
    #[error("cannot read template {path}")]
    TemplateIo {
        path: String,
        source: std::io::Error,
    },
    #[error("no soft prompt for node {0}")]
    MissingSoftPrompt(NodeId),
    #[error("node {0} has no text")]
    EmptyText(NodeId),
    #[error("target {target} is not the tree root {root}")]
    RootMismatch { target: NodeId, root: NodeId },
    #[error("candidate {0} is not in the computation tree")]
    ForeignCandidate(NodeId),
    #[error("class {0} has no name")]
    UnknownClass(usize),
}

/// Prompt layout for one dataset, loaded from `templates/<dataset>.json`.
///
/// Placeholders: `{ID}` in `target_header` and `stanza_header`, `{CATEGORY}`
/// anywhere, `{CATEGORY_LIST}` in the preamble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub dataset: String,
    pub entity_noun: String,
    pub preamble: String,
    /// Categories named in the preamble. Empty means "use the graph's class
    /// names".
    #[serde(default)]
    pub category_list: Vec<String>,
    pub target_header: String,
    pub target_begin: String,
    pub target_end: String,
    pub neighbor_header: String,
    pub stanza_header: String,
    pub node_begin: String,
    pub node_end: String,
    pub instructions: String,
}

const SUPPORT_CONTRACT: &str = "Support: YES or NO";

const BUILTIN: &[(&str, &str)] = &[
    ("amazon", include_str!("../../../templates/amazon.json")),
    ("cora", include_str!("../../../templates/cora.json")),
    ("wikics", include_str!("../../../templates/wikics.json")),
    ("liar", include_str!("../../../templates/liar.json")),
    ("synthetic", include_str!("../../../templates/synthetic.json")),
];

impl PromptTemplate {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let t: PromptTemplate =
            serde_json::from_str(text).map_err(|e| PromptError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::TemplateIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Template shipped with the crate for `dataset`, if there is one.
    pub fn builtin(dataset: &str) -> Option<Self> {
        let key = dataset.to_ascii_lowercase();
        BUILTIN
            .iter()
            .find(|(name, _)| *name == key)
            .map(|(_, json)| Self::from_json(json).expect("bundled templates are valid"))
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let fail = |m: &str| Err(PromptError::Template(format!("{}: {m}", self.dataset)));
        if self.entity_noun.trim().is_empty() {
            return fail("entity_noun is empty");
        }
        if !self.stanza_header.contains("{ID}") {
            return fail("stanza_header lacks the {ID} placeholder");
        }
        if !self.target_header.contains("{ID}") {
            return fail("target_header lacks the {ID} placeholder");
        }
        for (open, close) in [
            (&self.target_begin, &self.target_end),
            (&self.node_begin, &self.node_end),
        ] {
            let (o, c) = (open.trim(), close.trim());
            if o.is_empty() || c.is_empty() || o == c {
                return fail("marker pairs must be non-empty and distinct");
            }
        }
        if self.target_begin.trim() == self.node_begin.trim() {
            return fail("target and neighbor markers must differ");
        }
        if !self.instructions.contains(SUPPORT_CONTRACT) {
            return fail("instructions lack the \"Support: YES or NO\" contract");
        }
        Ok(())
    }
}

/// One piece of a hybrid prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Text(String),
    /// `k × h` matrix injected in place of token embeddings.
    Soft { node: NodeId, matrix: Array2<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Soft,
    Text,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PromptOptions {
    /// In soft mode, also place the node's raw text before its matrix.
    pub include_text_in_soft_mode: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrompt {
    pub segments: Vec<Segment>,
    pub target: NodeId,
    /// Nodes the model is asked about, ascending.
    pub candidates: Vec<NodeId>,
    pub mode: PromptMode,
    pub entity_noun: String,
    pub category: String,
    /// Index into `segments` of each node's payload (soft matrix in soft
    /// mode, text in text mode). Covers the target and every candidate.
    pub payloads: BTreeMap<NodeId, usize>,
}

impl HybridPrompt {
    pub fn payload(&self, node: NodeId) -> Option<&Segment> {
        self.payloads.get(&node).map(|&i| &self.segments[i])
    }

    pub fn soft_segment_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Soft { .. }))
            .count()
    }
}

/// Builds the prompt for `tree.root` over every other unique tree node.
pub fn build_hybrid_prompt(
    graph: &TextAttributedGraph,
    tree: &ComputationTree,
    soft: &BTreeMap<NodeId, Array2<f64>>,
    template: &PromptTemplate,
    mode: PromptMode,
    predicted_class: usize,
    options: PromptOptions,
) -> Result<HybridPrompt, PromptError> {
    let candidates = tree.candidates();
    build_prompt_for(graph, tree, &candidates, soft, template, mode, predicted_class, options)
}

/// Like [`build_hybrid_prompt`] with an explicit candidate list, which must
/// be a subset of the tree's nodes.
#[allow(clippy::too_many_arguments)]
pub fn build_prompt_for(
    graph: &TextAttributedGraph,
    tree: &ComputationTree,
    candidates: &[NodeId],
    soft: &BTreeMap<NodeId, Array2<f64>>,
    template: &PromptTemplate,
    mode: PromptMode,
    predicted_class: usize,
    options: PromptOptions,
) -> Result<HybridPrompt, PromptError> {
    let target = tree.root;
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    candidates.retain(|&u| u != target);
    for &u in &candidates {
        if !tree.unique_nodes.contains(&u) {
            return Err(PromptError::ForeignCandidate(u));
        }
    }
    if candidates.is_empty() {
        warn!("node {target} has no candidates; emitting a target-only prompt");
    }
    let category = graph
        .class_names()
        .get(predicted_class)
        .cloned()
        .ok_or(PromptError::UnknownClass(predicted_class))?;
    let category_list = if template.category_list.is_empty() {
        graph.class_names().join(", ")
    } else {
        template.category_list.join(", ")
    };
    let fill = |s: &str, id: Option<NodeId>| {
        let mut out = s
            .replace("{CATEGORY_LIST}", &category_list)
            .replace("{CATEGORY}", &category);
        if let Some(id) = id {
            out = out.replace("{ID}", &id.to_string());
        }
        out
    };

    let mut b = Builder::default();
    b.text(&fill(&template.preamble, None));
    b.text(&fill(&template.target_header, Some(target)));
    b.text(&template.target_begin);
    b.payload(graph, soft, mode, options, target)?;
    b.text(&template.target_end);
    if !candidates.is_empty() {
        b.text(&fill(&template.neighbor_header, None));
        for &u in &candidates {
            b.text(&fill(&template.stanza_header, Some(u)));
            b.text(&template.node_begin);
            b.payload(graph, soft, mode, options, u)?;
            b.text(&template.node_end);
        }
    }
    b.text(&fill(&template.instructions, None));

    Ok(HybridPrompt {
        segments: b.segments,
        target,
        candidates,
        mode,
        entity_noun: template.entity_noun.clone(),
        category,
        payloads: b.payloads,
    })
}

#[derive(Default)]
struct Builder {
    segments: Vec<Segment>,
    payloads: BTreeMap<NodeId, usize>,
}

impl Builder {
    /// Appends text, merging with a preceding text segment.
    fn text(&mut self, s: &str) {
        let last = self.segments.len().wrapping_sub(1);
        // payload text segments must stay separate
        let last_is_payload = self.payloads.values().any(|&i| i == last);
        if let Some(Segment::Text(prev)) = self.segments.last_mut() {
            if !last_is_payload {
                prev.push_str(s);
                return;
            }
        }
        self.segments.push(Segment::Text(s.to_string()));
    }

    fn payload(
        &mut self,
        graph: &TextAttributedGraph,
        soft: &BTreeMap<NodeId, Array2<f64>>,
        mode: PromptMode,
        options: PromptOptions,
        node: NodeId,
    ) -> Result<(), PromptError> {
        match mode {
            PromptMode::Text => {
                let text = graph.text(node);
                if text.trim().is_empty() {
                    return Err(PromptError::EmptyText(node));
                }
                self.payloads.insert(node, self.segments.len());
                self.segments.push(Segment::Text(text.to_string()));
            }
            PromptMode::Soft => {
                let matrix = soft.get(&node).ok_or(PromptError::MissingSoftPrompt(node))?;
                if options.include_text_in_soft_mode {
                    self.text(&format!("{} ", graph.text(node)));
                }
                self.payloads.insert(node, self.segments.len());
                self.segments.push(Segment::Soft {
                    node,
                    matrix: matrix.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Flattens a prompt to text, writing each soft segment as
/// `[SOFT:<node>:<k>x<h>]`.
pub fn render_text_only(p: &HybridPrompt) -> String {
    let mut out = String::new();
    for seg in &p.segments {
        match seg {
            Segment::Text(s) => out.push_str(s),
            Segment::Soft { node, matrix } => {
                let _ = write!(out, "[SOFT:{node}:{}x{}]", matrix.nrows(), matrix.ncols());
            }
        }
    }
    out
}
