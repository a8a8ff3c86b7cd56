//! Text-attributed graphs: data model, on-disk ingestion, induced subgraphs and
//! computation trees.
//!
//! A dataset directory holds three files:
//!
//! * `meta.json`: `{name, num_nodes, num_classes, feature_dim, class_names[],
//!   splits{train[],val[],test[]}}` (optionally `num_edges`, checked against the
//!   number of edge lines read)
//! * `nodes.jsonl`: one `{id, text, label, features:[f64...]}` object per line
//! * `edges.tsv`: `u<TAB>v` per line
//!
//! Edges are undirected. Self-loops are dropped and duplicate edges collapsed
//! at construction time, so every graph in memory has a clean edge set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("node {node} has label {label} but the dataset declares {num_classes} classes")]
    LabelOutOfRange {
        node: NodeId,
        label: usize,
        num_classes: usize,
    },
    #[error("node {node} has {got} features, expected {expected}")]
    FeatureLength {
        node: NodeId,
        expected: usize,
        got: usize,
    },
    #[error("node id {node} outside 0..{num_nodes}")]
    NodeOutOfRange { node: NodeId, num_nodes: usize },
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("invalid splits: {0}")]
    InvalidSplits(String),
    #[error("dataset does not match meta.json: {0}")]
    MetaMismatch(String),
}

/// Train/validation/test node sets. Kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<NodeId>,
    #[serde(default)]
    pub val: Vec<NodeId>,
    #[serde(default)]
    pub test: Vec<NodeId>,
}

impl Splits {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }

    /// Seeded random 60/20/20 partition of `0..n`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut ids: Vec<NodeId> = (0..n).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (n as f64 * 0.6).round() as usize;
        let n_val = (n as f64 * 0.2).round() as usize;
        let mut train = ids[..n_train].to_vec();
        let mut val = ids[n_train..n_train + n_val].to_vec();
        let mut test = ids[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Splits { train, val, test }
    }

    fn normalize(&mut self) {
        for s in [&mut self.train, &mut self.val, &mut self.test] {
            s.sort_unstable();
            s.dedup();
        }
    }
}

/// Everything needed to build a [`TextAttributedGraph`]. Validation happens in
/// [`TextAttributedGraph::from_parts`].
#[derive(Debug, Clone)]
pub struct GraphParts {
    pub name: String,
    pub texts: Vec<String>,
    pub features: Array2<f64>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub labels: Vec<usize>,
    pub splits: Splits,
    pub class_names: Vec<String>,
}

/// An undirected graph whose nodes carry a document, a feature vector and a
/// class label. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAttributedGraph {
    name: String,
    texts: Vec<String>,
    features: Array2<f64>,
    edges: Vec<(NodeId, NodeId)>,
    labels: Vec<usize>,
    splits: Splits,
    class_names: Vec<String>,
    neighbors: Vec<Vec<NodeId>>,
}

impl TextAttributedGraph {
    pub fn from_parts(parts: GraphParts) -> Result<Self, GraphError> {
        let GraphParts {
            name,
            texts,
            features,
            edges,
            labels,
            mut splits,
            class_names,
        } = parts;
        let n = features.nrows();
        if texts.len() != n || labels.len() != n {
            return Err(GraphError::MetaMismatch(format!(
                "{} feature rows, {} texts, {} labels",
                n,
                texts.len(),
                labels.len()
            )));
        }
        let num_classes = class_names.len();
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange {
                    node,
                    label,
                    num_classes,
                });
            }
        }

        let mut clean = Vec::with_capacity(edges.len());
        let mut self_loops = 0usize;
        for &(u, v) in &edges {
            for node in [u, v] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, num_nodes: n });
                }
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            clean.push((u.min(v), u.max(v)));
        }
        clean.sort_unstable();
        let before = clean.len();
        clean.dedup();
        if self_loops > 0 {
            warn!("{name}: dropped {self_loops} self-loop(s)");
        }
        if before != clean.len() {
            warn!("{name}: collapsed {} duplicate edge(s)", before - clean.len());
        }

        splits.normalize();
        let mut seen = BTreeMap::new();
        for (split_name, ids) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            for &id in ids {
                if id >= n {
                    return Err(GraphError::NodeOutOfRange { node: id, num_nodes: n });
                }
                if let Some(prev) = seen.insert(id, split_name) {
                    return Err(GraphError::InvalidSplits(format!(
                        "node {id} is in both {prev} and {split_name}"
                    )));
                }
            }
        }
        if !splits.is_empty() && seen.len() != n {
            warn!(
                "{name}: splits cover {} of {} labeled nodes",
                seen.len(),
                n
            );
        }

        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &clean {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        Ok(TextAttributedGraph {
            name,
            texts,
            features,
            edges: clean,
            labels,
            splits,
            class_names,
            neighbors,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    /// Number of undirected edges after cleaning.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn text(&self, v: NodeId) -> &str {
        &self.texts[v]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn label(&self, v: NodeId) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors[v].len()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn check_node(&self, v: NodeId) -> Result<(), GraphError> {
        if v < self.num_nodes() {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange {
                node: v,
                num_nodes: self.num_nodes(),
            })
        }
    }

    /// The subgraph induced by `nodes`. Node ids are compacted in ascending
    /// order of the original ids; the returned [`IdMap`] translates between
    /// the two numberings.
    pub fn induced_subgraph(
        &self,
        nodes: &BTreeSet<NodeId>,
    ) -> Result<(TextAttributedGraph, IdMap), GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::EmptyNodeSet);
        }
        for &v in nodes {
            self.check_node(v)?;
        }
        let map = IdMap::new(nodes.iter().copied().collect());
        let keep = map.to_original.as_slice();

        let features = self.features.select(ndarray::Axis(0), keep);
        let texts = keep.iter().map(|&v| self.texts[v].clone()).collect();
        let labels = keep.iter().map(|&v| self.labels[v]).collect();
        let edges: Vec<(NodeId, NodeId)> = self
            .edges
            .iter()
            .filter_map(|&(u, v)| Some((map.local(u)?, map.local(v)?)))
            .collect();
        let remap = |ids: &[NodeId]| ids.iter().filter_map(|&v| map.local(v)).collect();
        let splits = Splits {
            train: remap(&self.splits.train),
            val: remap(&self.splits.val),
            test: remap(&self.splits.test),
        };

        let mut neighbors = vec![Vec::<NodeId>::new(); keep.len()];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let sub = TextAttributedGraph {
            name: self.name.clone(),
            texts,
            features,
            edges,
            labels,
            splits,
            class_names: self.class_names.clone(),
            neighbors,
        };
        Ok((sub, map))
    }

    /// Unrolls message passing around `root` to `depth` levels.
    pub fn computation_tree(
        &self,
        root: NodeId,
        depth: usize,
    ) -> Result<ComputationTree, GraphError> {
        self.check_node(root)?;
        let mut positions = vec![TreePosition {
            node: root,
            parent: None,
            level: 0,
        }];
        let mut frontier = 0..1;
        for level in 1..=depth {
            let start = positions.len();
            for pos in frontier.clone() {
                let node = positions[pos].node;
                for &next in &self.neighbors[node] {
                    positions.push(TreePosition {
                        node: next,
                        parent: Some(pos),
                        level,
                    });
                }
            }
            frontier = start..positions.len();
        }
        let unique_nodes = positions.iter().map(|p| p.node).collect();
        Ok(ComputationTree {
            root,
            depth,
            positions,
            unique_nodes,
        })
    }

    /// Nodes within `radius` hops of `v`, including `v`.
    pub fn khop_nodes(&self, v: NodeId, radius: usize) -> BTreeSet<NodeId> {
        let mut dist = BTreeMap::new();
        dist.insert(v, 0usize);
        let mut queue = std::collections::VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == radius {
                continue;
            }
            for &w in &self.neighbors[u] {
                if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(w) {
                    slot.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist.into_keys().collect()
    }
}

/// Translation between original ids and the compact ids of an induced
/// subgraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    to_original: Vec<NodeId>,
    to_local: BTreeMap<NodeId, NodeId>,
}

impl IdMap {
    fn new(to_original: Vec<NodeId>) -> Self {
        let to_local = to_original
            .iter()
            .enumerate()
            .map(|(local, &orig)| (orig, local))
            .collect();
        IdMap {
            to_original,
            to_local,
        }
    }

    pub fn local(&self, original: NodeId) -> Option<NodeId> {
        self.to_local.get(&original).copied()
    }

    pub fn original(&self, local: NodeId) -> NodeId {
        self.to_original[local]
    }

    pub fn originals(&self) -> &[NodeId] {
        &self.to_original
    }
}

/// One slot of a computation tree. The same graph node may fill many slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreePosition {
    pub node: NodeId,
    pub parent: Option<usize>,
    pub level: usize,
}

/// All walks of length at most `depth` starting at `root`, arranged as a tree.
/// Walks may revisit nodes, including immediate backtracking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputationTree {
    pub root: NodeId,
    pub depth: usize,
    pub positions: Vec<TreePosition>,
    pub unique_nodes: BTreeSet<NodeId>,
}

impl ComputationTree {
    /// Number of tree slots, i.e. the number of walks of length `<= depth`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Distinct graph nodes other than the root, ascending.
    pub fn candidates(&self) -> Vec<NodeId> {
        self.unique_nodes
            .iter()
            .copied()
            .filter(|&u| u != self.root)
            .collect()
    }

    /// Graph-node sequence from the root to `position`.
    pub fn walk(&self, position: usize) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = Some(position);
        while let Some(p) = cur {
            out.push(self.positions[p].node);
            cur = self.positions[p].parent;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Deserialize)]
struct MetaFile {
    name: String,
    num_nodes: usize,
    num_classes: usize,
    feature_dim: usize,
    #[serde(default)]
    num_edges: Option<usize>,
    class_names: Vec<String>,
    #[serde(default)]
    splits: Splits,
}

#[derive(Debug, Deserialize)]
struct NodeRecord {
    id: NodeId,
    #[serde(default)]
    text: String,
    label: usize,
    features: Vec<f64>,
}

/// Ingestion knobs.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Overrides the dataset name from `meta.json`.
    pub name: Option<String>,
    /// Keep only nodes `0..max_nodes` and the edges among them.
    pub max_nodes: Option<usize>,
    /// Seed for the 60/20/20 split generated when `meta.json` has none.
    pub split_seed: u64,
}

/// Summary of what was read from disk, for `ingest-check`.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub name: String,
    pub num_nodes: usize,
    pub edge_lines: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Reads a dataset directory.
pub fn load_tag_dataset(
    dir: &Path,
    opts: &LoadOptions,
) -> Result<(TextAttributedGraph, IngestReport), GraphError> {
    let open = |file: &str| -> Result<(PathBuf, File), GraphError> {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(GraphError::MissingFile(path));
        }
        let f = File::open(&path).map_err(|source| GraphError::Io {
            path: path.clone(),
            source,
        })?;
        Ok((path, f))
    };

    let (meta_path, meta_file) = open("meta.json")?;
    let meta: MetaFile =
        serde_json::from_reader(BufReader::new(meta_file)).map_err(|e| GraphError::Malformed {
            file: meta_path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
    if meta.class_names.len() != meta.num_classes {
        return Err(GraphError::MetaMismatch(format!(
            "num_classes is {} but {} class names are listed",
            meta.num_classes,
            meta.class_names.len()
        )));
    }

    let (nodes_path, nodes_file) = open("nodes.jsonl")?;
    let nodes_name = nodes_path.display().to_string();
    let mut records: Vec<Option<NodeRecord>> = (0..meta.num_nodes).map(|_| None).collect();
    for (idx, line) in BufReader::new(nodes_file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: nodes_path.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(&line).map_err(|e| GraphError::Malformed {
            file: nodes_name.clone(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if rec.id >= meta.num_nodes {
            return Err(GraphError::Malformed {
                file: nodes_name.clone(),
                line: lineno,
                msg: format!("node id {} outside 0..{}", rec.id, meta.num_nodes),
            });
        }
        if rec.label >= meta.num_classes {
            return Err(GraphError::LabelOutOfRange {
                node: rec.id,
                label: rec.label,
                num_classes: meta.num_classes,
            });
        }
        if rec.features.len() != meta.feature_dim {
            return Err(GraphError::FeatureLength {
                node: rec.id,
                expected: meta.feature_dim,
                got: rec.features.len(),
            });
        }
        let id = rec.id;
        if records[id].replace(rec).is_some() {
            return Err(GraphError::Malformed {
                file: nodes_name.clone(),
                line: lineno,
                msg: format!("duplicate node id {id}"),
            });
        }
    }
    if let Some(missing) = records.iter().position(Option::is_none) {
        return Err(GraphError::MetaMismatch(format!(
            "nodes.jsonl has no record for node {missing}"
        )));
    }

    let (edges_path, edges_file) = open("edges.tsv")?;
    let edges_name = edges_path.display().to_string();
    let mut edges = Vec::new();
    for (idx, line) in BufReader::new(edges_file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: edges_path.clone(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let parse = |tok: Option<&str>| -> Result<NodeId, GraphError> {
            tok.and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| GraphError::Malformed {
                    file: edges_name.clone(),
                    line: lineno,
                    msg: format!("expected `u<TAB>v`, got {trimmed:?}"),
                })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(GraphError::Malformed {
                file: edges_name.clone(),
                line: lineno,
                msg: "more than two columns".into(),
            });
        }
        for node in [u, v] {
            if node >= meta.num_nodes {
                return Err(GraphError::Malformed {
                    file: edges_name.clone(),
                    line: lineno,
                    msg: format!("node id {node} outside 0..{}", meta.num_nodes),
                });
            }
        }
        edges.push((u, v));
    }
    let edge_lines = edges.len();
    if let Some(expected) = meta.num_edges {
        if expected != edge_lines {
            return Err(GraphError::MetaMismatch(format!(
                "num_edges is {expected} but edges.tsv has {edge_lines} edge lines"
            )));
        }
    }

    let keep = opts.max_nodes.unwrap_or(meta.num_nodes).min(meta.num_nodes);
    let records: Vec<NodeRecord> = records.into_iter().take(keep).flatten().collect();
    let mut features = Array2::zeros((keep, meta.feature_dim));
    for (row, rec) in records.iter().enumerate() {
        for (col, &x) in rec.features.iter().enumerate() {
            features[[row, col]] = x;
        }
    }
    let edges = edges
        .into_iter()
        .filter(|&(u, v)| u < keep && v < keep)
        .collect();
    let mut splits = meta.splits;
    if keep < meta.num_nodes {
        for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
            s.retain(|&v| v < keep);
        }
    }
    if splits.is_empty() {
        splits = Splits::random(keep, opts.split_seed);
    }

    let graph = TextAttributedGraph::from_parts(GraphParts {
        name: opts.name.clone().unwrap_or(meta.name),
        texts: records.iter().map(|r| r.text.clone()).collect(),
        labels: records.iter().map(|r| r.label).collect(),
        features,
        edges,
        splits,
        class_names: meta.class_names,
    })?;
    let report = IngestReport {
        name: graph.name().to_string(),
        num_nodes: graph.num_nodes(),
        edge_lines,
        num_edges: graph.num_edges(),
        num_classes: graph.num_classes(),
        feature_dim: graph.feature_dim(),
        train: graph.splits().train.len(),
        val: graph.splits().val.len(),
        test: graph.splits().test.len(),
    };
    Ok((graph, report))
}

/// Writes `graph` in the dataset directory layout read by [`load_tag_dataset`].
pub fn write_tag_dataset(graph: &TextAttributedGraph, dir: &Path) -> std::io::Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    let meta = serde_json::json!({
        "name": graph.name(),
        "num_nodes": graph.num_nodes(),
        "num_classes": graph.num_classes(),
        "feature_dim": graph.feature_dim(),
        "num_edges": graph.num_edges(),
        "class_names": graph.class_names(),
        "splits": graph.splits(),
    });
    std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    let mut nodes = std::io::BufWriter::new(File::create(dir.join("nodes.jsonl"))?);
    for v in 0..graph.num_nodes() {
        let rec = serde_json::json!({
            "id": v,
            "text": graph.text(v),
            "label": graph.label(v),
            "features": graph.features().row(v).to_vec(),
        });
        writeln!(nodes, "{rec}")?;
    }
    nodes.flush()?;
    let mut edges = std::io::BufWriter::new(File::create(dir.join("edges.tsv"))?);
    for &(u, v) in graph.edges() {
        writeln!(edges, "{u}\t{v}")?;
    }
    edges.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> TextAttributedGraph {
        TextAttributedGraph::from_parts(GraphParts {
            name: "t".into(),
            texts: (0..n).map(|i| format!("node {i}")).collect(),
            features: Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64),
            edges: edges.to_vec(),
            labels: vec![0; n],
            splits: Splits::default(),
            class_names: vec!["only".into()],
        })
        .unwrap()
    }

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn triangle_pair_has_one_edge() {
        let g = graph_from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let (sub, map) = g.induced_subgraph(&set(&[0, 1])).unwrap();
        assert_eq!(sub.num_nodes(), 2);
        assert_eq!(sub.num_edges(), 1);
        assert_eq!(map.originals(), &[0, 1]);
    }

    #[test]
    fn five_cycle_non_adjacent_nodes() {
        let g = graph_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let (sub, _) = g.induced_subgraph(&set(&[0, 2])).unwrap();
        assert_eq!(sub.num_edges(), 0);
        // 4 and 0 close the cycle, so this triple keeps one edge
        let (sub, map) = g.induced_subgraph(&set(&[0, 2, 4])).unwrap();
        assert_eq!(sub.num_nodes(), 3);
        assert_eq!(sub.num_edges(), 1);
        assert_eq!(map.local(4), Some(2));
        assert_eq!(map.local(1), None);
    }

    #[test]
    fn full_node_set_reproduces_graph() {
        let g = graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let (sub, _) = g.induced_subgraph(&set(&[0, 1, 2, 3])).unwrap();
        assert_eq!(sub, g);
    }

    #[test]
    fn induced_subgraph_copies_payloads() {
        let g = graph_from_edges(4, &[(0, 1), (1, 3)]);
        let (sub, _) = g.induced_subgraph(&set(&[1, 3])).unwrap();
        assert_eq!(sub.text(1), "node 3");
        assert_eq!(sub.features().row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(sub.edges(), &[(0, 1)]);
    }

    #[test]
    fn induced_subgraph_rejects_bad_sets() {
        let g = graph_from_edges(3, &[(0, 1)]);
        assert!(matches!(
            g.induced_subgraph(&BTreeSet::new()),
            Err(GraphError::EmptyNodeSet)
        ));
        assert!(matches!(
            g.induced_subgraph(&set(&[0, 7])),
            Err(GraphError::NodeOutOfRange { node: 7, .. })
        ));
    }

    #[test]
    fn self_loops_and_duplicates_are_cleaned() {
        let g = graph_from_edges(3, &[(0, 0), (0, 1), (1, 0), (2, 1)]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn triangle_tree_depth_two() {
        let g = graph_from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let t = g.computation_tree(0, 2).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.unique_nodes, set(&[0, 1, 2]));
        assert_eq!(t.candidates(), vec![1, 2]);
    }

    #[test]
    fn path_tree_depth_two_backtracks() {
        let g = graph_from_edges(3, &[(0, 1), (1, 2)]);
        let t = g.computation_tree(0, 2).unwrap();
        let nodes: Vec<_> = t.positions.iter().map(|p| p.node).collect();
        assert_eq!(nodes, vec![0, 1, 0, 2]);
        assert_eq!(t.walk(3), vec![0, 1, 2]);
    }

    #[test]
    fn star_center_depth_one() {
        let g = graph_from_edges(4, &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(g.computation_tree(0, 1).unwrap().len(), 4);
    }

    #[test]
    fn isolated_node_tree_is_root_only() {
        let g = graph_from_edges(2, &[]);
        let t = g.computation_tree(1, 3).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.candidates().is_empty());
        assert!(g.computation_tree(5, 1).is_err());
    }

    #[test]
    fn random_splits_are_60_20_20() {
        let s = Splits::random(10, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, Splits::random(10, 3));
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let err = TextAttributedGraph::from_parts(GraphParts {
            name: "t".into(),
            texts: vec![String::new(); 2],
            features: Array2::zeros((2, 1)),
            edges: vec![],
            labels: vec![0, 0],
            splits: Splits {
                train: vec![0],
                val: vec![0],
                test: vec![1],
            },
            class_names: vec!["a".into()],
        })
        .unwrap_err();
        assert!(matches!(err, GraphError::InvalidSplits(_)));
    }
}
