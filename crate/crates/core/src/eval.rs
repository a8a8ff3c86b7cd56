//! Fidelity and size of explanation sets, the Node and Random baselines, and
//! the benchmark driver that writes `report.json` / `report.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LlmBackend;
use crate::explain::{explain_node, ExplainContext, ExplainMode, PipelineConfig};
use crate::gcn::{GcnError, GcnModel};
use crate::graph::{GraphError, NodeId, TextAttributedGraph};
use crate::projector::ProjectorModel;
use crate::prompt::PromptTemplate;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("explanation for {0} does not contain its target")]
    TargetMissing(NodeId),
    #[error("no results to average")]
    Empty,
    #[error("q must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("unknown method {0:?} (expected node, random(q), llm_text, llm_pr or llm_pr_po)")]
    UnknownMethod(String),
    #[error("method {0} needs {1}")]
    MissingInput(String, &'static str),
    #[error("evaluation population is empty")]
    EmptyPopulation,
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error(transparent)]
    Explain(#[from] crate::explain::ExplainError),
    #[error("cannot write report")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize report")]
    Json(#[from] serde_json::Error),
}

/// Whether the model predicts the same class for `v` on `G[set]` as on `G`.
pub fn agrees_on_subgraph(
    gnn: &GcnModel,
    graph: &TextAttributedGraph,
    full_prediction: usize,
    v: NodeId,
    set: &BTreeSet<NodeId>,
) -> Result<bool, EvalError> {
    if !set.contains(&v) {
        return Err(EvalError::TargetMissing(v));
    }
    let (sub, map) = graph.induced_subgraph(set)?;
    let local = map.local(v).expect("target is in the set");
    Ok(gnn.predict(&sub, local)? == full_prediction)
}

/// Fraction of targets whose prediction on their explanation subgraph
/// matches the full-graph prediction.
pub fn fidelity(
    gnn: &GcnModel,
    graph: &TextAttributedGraph,
    results: &BTreeMap<NodeId, BTreeSet<NodeId>>,
) -> Result<f64, EvalError> {
    let full = gnn.forward(graph)?.predictions();
    fidelity_with(gnn, graph, &full, results)
}

/// [`fidelity`] with precomputed full-graph predictions.
pub fn fidelity_with(
    gnn: &GcnModel,
    graph: &TextAttributedGraph,
    full_predictions: &[usize],
    results: &BTreeMap<NodeId, BTreeSet<NodeId>>,
) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = results
        .par_iter()
        .map(|(&v, set)| agrees_on_subgraph(gnn, graph, full_predictions[v], v, set))
        .collect::<Result<Vec<bool>, _>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / results.len() as f64)
}

pub fn avg_size(results: &BTreeMap<NodeId, BTreeSet<NodeId>>) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(results.values().map(|s| s.len()).sum::<usize>() as f64 / results.len() as f64)
}

pub fn baseline_node(v: NodeId) -> BTreeSet<NodeId> {
    BTreeSet::from([v])
}

/// `v` plus `round(q·(T-1))` candidates drawn uniformly without replacement,
/// where `T` counts the unique nodes of the computation tree.
pub fn baseline_random(
    graph: &TextAttributedGraph,
    v: NodeId,
    q: f64,
    tree_depth: usize,
    seed: u64,
) -> Result<BTreeSet<NodeId>, EvalError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(EvalError::InvalidFraction(q));
    }
    let tree = graph.computation_tree(v, tree_depth)?;
    let candidates = tree.candidates();
    let take = (q * candidates.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (v as u64).wrapping_mul(0xa076_1d64_78bd_642f));
    let mut out: BTreeSet<NodeId> = candidates.choose_multiple(&mut rng, take).copied().collect();
    out.insert(v);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Node,
    Random(f64),
    Llm(ExplainMode),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Node => f.write_str("node"),
            Method::Random(q) => write!(f, "random({q})"),
            Method::Llm(m) => f.write_str(m.name()),
        }
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || EvalError::UnknownMethod(s.to_string());
        Ok(match t.as_str() {
            "node" => Method::Node,
            "llm_text" | "llm" => Method::Llm(ExplainMode::LlmText),
            "llm_pr" => Method::Llm(ExplainMode::LlmPr),
            "llm_pr_po" | "ours" => Method::Llm(ExplainMode::LlmPrPo),
            _ => {
                let inner = t
                    .strip_prefix("random(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("random:"))
                    .ok_or_else(bad)?;
                let q: f64 = inner.trim().parse().map_err(|_| bad())?;
                if !(q > 0.0 && q <= 1.0) {
                    return Err(EvalError::InvalidFraction(q));
                }
                Method::Random(q)
            }
        })
    }
}

/// Reference explanation sizes used to derive a per-dataset `p`.
const REFERENCE_SIZES: &[(&str, f64)] = &[
    ("cora", 17.4),
    ("wikics", 8.9),
    ("liar", 10.3),
    ("amazon", 1.30),
];

/// `reference size / mean tree size` for known datasets, clamped to
/// `(0, 1]`; 0.5 otherwise.
pub fn default_p(dataset: &str, mean_tree_size: f64) -> f64 {
    let key = dataset.to_ascii_lowercase();
    match REFERENCE_SIZES.iter().find(|(n, _)| *n == key) {
        Some(&(_, size)) if mean_tree_size > 0.0 => (size / mean_tree_size).clamp(1e-6, 1.0),
        _ => 0.5,
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    /// Evaluate on at most this many targets, drawn with `seed`.
    pub num_targets: Option<usize>,
    pub seed: u64,
    pub random_seeds: usize,
    /// Explanation settings. `None` for `p` means [`default_p`].
    pub pipeline: PipelineConfig,
    pub p: Option<f64>,
    pub workers: usize,
    /// Drop targets with these ground-truth labels; the unfiltered
    /// population is reported alongside.
    pub exclude_labels: Vec<usize>,
    pub population: Population,
}

/// Which nodes are explained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    /// The test split, or every node when the split is empty.
    #[default]
    Test,
    All,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            methods: vec![Method::Node, Method::Random(0.5), Method::Random(0.25)],
            num_targets: None,
            seed: 0,
            random_seeds: 5,
            pipeline: PipelineConfig::default(),
            p: None,
            workers: 1,
            exclude_labels: Vec::new(),
            population: Population::Test,
        }
    }
}

/// Projector settings echoed into the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorEcho {
    pub beta: f64,
    pub tau: f64,
    pub k: usize,
}

pub struct BenchmarkInputs<'a> {
    pub graph: &'a TextAttributedGraph,
    pub gnn: &'a GcnModel,
    pub gnn_id: String,
    pub projector: Option<(&'a ProjectorModel, ProjectorEcho)>,
    pub backend: Option<&'a dyn LlmBackend>,
    pub template: Option<&'a PromptTemplate>,
    /// Mock decision threshold, echoed when known.
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Mean over seeds; `None` when no target succeeded.
    pub fidelity: Option<f64>,
    pub fidelity_std: f64,
    pub mean_size: Option<f64>,
    pub size_std: f64,
    pub num_targets: usize,
    pub failures: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFailure {
    pub method: String,
    pub target: NodeId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub name: String,
    pub num_targets: usize,
    pub mean_tree_size: f64,
    pub rows: Vec<MethodRow>,
    pub failures: Vec<TargetFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub p: f64,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    pub k: Option<usize>,
    pub theta: Option<f64>,
    pub tree_depth: usize,
    pub seed: u64,
    pub random_seeds: usize,
    pub num_targets: Option<usize>,
    pub population: Population,
    pub backend: Option<String>,
}

/// Deterministic part of a benchmark run. Timing lives in `report.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub gnn_checkpoint: String,
    pub config: ConfigEcho,
    pub populations: Vec<PopulationReport>,
}

impl EvalReport {
    /// Rows of the primary population.
    pub fn rows(&self) -> &[MethodRow] {
        &self.populations[0].rows
    }

    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows().iter().find(|r| r.method == method)
    }

    /// True when some requested method produced no successful target.
    pub fn has_empty_rows(&self) -> bool {
        self.populations
            .iter()
            .flat_map(|p| &p.rows)
            .any(|r| r.num_targets == 0)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Explanation benchmark: {}\n\n", self.dataset);
        let c = &self.config;
        let _ = writeln!(
            out,
            "GNN checkpoint `{}`, tree depth {}, p = {:.4}, seed {}.\n",
            self.gnn_checkpoint, c.tree_depth, c.p, c.seed
        );
        for pop in &self.populations {
            let _ = writeln!(
                out,
                "## Population: {} ({} targets, mean tree size {:.2})\n",
                pop.name, pop.num_targets, pop.mean_tree_size
            );
            out.push_str("| Method | Fidelity | Size | Targets | Failures |\n");
            out.push_str("|---|---|---|---|---|\n");
            for r in &pop.rows {
                let fid = r.fidelity.map_or("n/a".to_string(), |f| {
                    if r.seeds.len() > 1 {
                        format!("{:.1}% ± {:.1}", 100.0 * f, 100.0 * r.fidelity_std)
                    } else {
                        format!("{:.1}%", 100.0 * f)
                    }
                });
                let size = r.mean_size.map_or("n/a".to_string(), |s| {
                    if r.seeds.len() > 1 {
                        format!("{s:.2} ± {:.2}", r.size_std)
                    } else {
                        format!("{s:.2}")
                    }
                });
                let _ = writeln!(
                    out,
                    "| {} | {fid} | {size} | {} | {} |",
                    r.method, r.num_targets, r.failures
                );
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.json`, `report.md` and `report.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, wall_clock_seconds: f64) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        let meta = serde_json::json!({ "wall_clock_seconds": wall_clock_seconds });
        std::fs::write(dir.join("report.meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluation targets: the chosen population, optionally without some
/// labels, optionally subsampled.
pub fn select_targets(
    graph: &TextAttributedGraph,
    population: Population,
    exclude_labels: &[usize],
    num_targets: Option<usize>,
    seed: u64,
) -> Vec<NodeId> {
    let mut targets: Vec<NodeId> = if population == Population::All || graph.splits().test.is_empty() {
        (0..graph.num_nodes()).collect()
    } else {
        graph.splits().test.clone()
    };
    targets.retain(|&v| !exclude_labels.contains(&graph.label(v)));
    targets.sort_unstable();
    if let Some(cap) = num_targets {
        if targets.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            targets.shuffle(&mut rng);
            targets.truncate(cap);
            targets.sort_unstable();
        }
    }
    targets
}

/// One target's explanation, or the reason it failed.
type TargetOutcome = (NodeId, Result<BTreeSet<NodeId>, String>);

fn outcome_row(
    method: &Method,
    per_seed: Vec<(u64, Vec<TargetOutcome>)>,
    inputs: &BenchmarkInputs<'_>,
    full: &[usize],
    failures: &mut Vec<TargetFailure>,
) -> MethodRow {
    let name = method.to_string();
    let mut fids = Vec::new();
    let mut sizes = Vec::new();
    let mut num_targets = 0;
    let mut failed = 0;
    let seeds: Vec<u64> = per_seed.iter().map(|(s, _)| *s).collect();
    for (_, outcomes) in per_seed {
        let mut ok = BTreeMap::new();
        for (v, res) in outcomes {
            match res {
                Ok(set) => {
                    ok.insert(v, set);
                }
                Err(error) => {
                    failed += 1;
                    failures.push(TargetFailure {
                        method: name.clone(),
                        target: v,
                        error,
                    });
                }
            }
        }
        num_targets = ok.len();
        if ok.is_empty() {
            continue;
        }
        match fidelity_with(inputs.gnn, inputs.graph, full, &ok) {
            Ok(f) => {
                fids.push(f);
                sizes.push(avg_size(&ok).expect("non-empty"));
            }
            Err(e) => failures.push(TargetFailure {
                method: name.clone(),
                target: *ok.keys().next().unwrap(),
                error: e.to_string(),
            }),
        }
    }
    let (fidelity, fidelity_std) = if fids.is_empty() {
        (None, 0.0)
    } else {
        let (m, s) = mean_std(&fids);
        (Some(m), s)
    };
    let (mean_size, size_std) = if sizes.is_empty() {
        (None, 0.0)
    } else {
        let (m, s) = mean_std(&sizes);
        (Some(m), s)
    };
    MethodRow {
        method: name,
        fidelity,
        fidelity_std,
        mean_size,
        size_std,
        num_targets: if fids.is_empty() { 0 } else { num_targets },
        failures: failed,
        seeds,
    }
}

fn evaluate_population(
    name: &str,
    targets: &[NodeId],
    inputs: &BenchmarkInputs<'_>,
    cfg: &BenchmarkConfig,
    ctx: Option<&ExplainContext<'_>>,
    pipeline: &PipelineConfig,
    full: &[usize],
) -> Result<PopulationReport, EvalError> {
    let graph = inputs.graph;
    let depth = pipeline.tree_depth;
    let tree_sizes = targets
        .iter()
        .map(|&v| graph.computation_tree(v, depth).map(|t| t.unique_nodes.len() as f64))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_tree_size = tree_sizes.iter().sum::<f64>() / tree_sizes.len() as f64;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for method in &cfg.methods {
        let per_seed = match method {
            Method::Node => vec![(
                cfg.seed,
                targets.iter().map(|&v| (v, Ok(baseline_node(v)))).collect(),
            )],
            Method::Random(q) => (0..cfg.random_seeds.max(1) as u64)
                .map(|i| {
                    let seed = cfg.seed + i;
                    let outcomes = targets
                        .par_iter()
                        .map(|&v| {
                            let r = baseline_random(graph, v, *q, depth, seed).map_err(|e| e.to_string());
                            (v, r)
                        })
                        .collect();
                    (seed, outcomes)
                })
                .collect(),
            Method::Llm(mode) => {
                let ctx = ctx.ok_or_else(|| EvalError::MissingInput(method.to_string(), "a backend"))?;
                let mut pcfg = pipeline.clone();
                pcfg.mode = *mode;
                let outcomes = targets
                    .par_iter()
                    .map(|&v| {
                        let r = explain_node(ctx, v, &pcfg)
                            .map(|e| e.s_v)
                            .map_err(|e| e.to_string());
                        (v, r)
                    })
                    .collect();
                vec![(cfg.seed, outcomes)]
            }
        };
        rows.push(outcome_row(method, per_seed, inputs, full, &mut failures));
    }
    Ok(PopulationReport {
        name: name.to_string(),
        num_targets: targets.len(),
        mean_tree_size,
        rows,
        failures,
    })
}

/// Runs every requested method and assembles the report. Per-target
/// failures are counted in the rows rather than aborting the run.
pub fn run_benchmark(inputs: &BenchmarkInputs<'_>, cfg: &BenchmarkConfig) -> Result<EvalReport, EvalError> {
    let graph = inputs.graph;
    let needs_llm = cfg.methods.iter().any(|m| matches!(m, Method::Llm(_)));
    let needs_projector = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Llm(ExplainMode::LlmPr | ExplainMode::LlmPrPo)));
    if needs_llm && (inputs.backend.is_none() || inputs.template.is_none()) {
        return Err(EvalError::MissingInput("llm methods".into(), "a backend and a template"));
    }
    if needs_projector && inputs.projector.is_none() {
        return Err(EvalError::MissingInput("soft-prompt methods".into(), "a projector"));
    }

    let targets = select_targets(graph, cfg.population, &cfg.exclude_labels, cfg.num_targets, cfg.seed);
    if targets.is_empty() {
        return Err(EvalError::EmptyPopulation);
    }
    let depth = cfg.pipeline.tree_depth;
    let mean_tree = targets
        .iter()
        .map(|&v| graph.computation_tree(v, depth).map(|t| t.unique_nodes.len() as f64))
        .sum::<Result<f64, _>>()?
        / targets.len() as f64;
    let mut pipeline = cfg.pipeline.clone();
    pipeline.p = cfg.p.unwrap_or_else(|| default_p(graph.name(), mean_tree));

    let full = inputs.gnn.forward(graph)?.predictions();
    let ctx = match (needs_llm, inputs.backend, inputs.template) {
        (true, Some(backend), Some(template)) => Some(ExplainContext::new(
            graph,
            inputs.gnn,
            inputs.projector.map(|(p, _)| p),
            backend,
            template,
        )?),
        _ => None,
    };
    let concurrency = inputs
        .backend
        .filter(|_| needs_llm)
        .map_or(usize::MAX, |b| b.descriptor().max_concurrency.max(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1).min(concurrency))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;

    let populations = pool.install(|| -> Result<Vec<PopulationReport>, EvalError> {
        let primary_name = if cfg.exclude_labels.is_empty() { "targets" } else { "filtered" };
        let mut pops = vec![evaluate_population(
            primary_name,
            &targets,
            inputs,
            cfg,
            ctx.as_ref(),
            &pipeline,
            &full,
        )?];
        if !cfg.exclude_labels.is_empty() {
            let all = select_targets(graph, cfg.population, &[], cfg.num_targets, cfg.seed);
            pops.push(evaluate_population("all", &all, inputs, cfg, ctx.as_ref(), &pipeline, &full)?);
        }
        Ok(pops)
    })?;

    let echo = inputs.projector.map(|(_, e)| e);
    Ok(EvalReport {
        dataset: graph.name().to_string(),
        gnn_checkpoint: inputs.gnn_id.clone(),
        config: ConfigEcho {
            p: pipeline.p,
            beta: echo.map(|e| e.beta),
            tau: echo.map(|e| e.tau),
            k: echo.map(|e| e.k),
            theta: inputs.theta,
            tree_depth: depth,
            seed: cfg.seed,
            random_seeds: cfg.random_seeds,
            num_targets: cfg.num_targets,
            population: cfg.population,
            backend: inputs.backend.filter(|_| needs_llm).map(|b| b.descriptor().id),
        },
        populations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parsing() {
        assert_eq!("node".parse::<Method>().unwrap(), Method::Node);
        assert_eq!("random(0.5)".parse::<Method>().unwrap(), Method::Random(0.5));
        assert_eq!("random:0.25".parse::<Method>().unwrap(), Method::Random(0.25));
        assert_eq!(
            "LLM_PR_PO".parse::<Method>().unwrap(),
            Method::Llm(ExplainMode::LlmPrPo)
        );
        assert!("random(0)".parse::<Method>().is_err());
        assert!("gnnexplainer".parse::<Method>().is_err());
        assert_eq!(Method::Random(0.5).to_string(), "random(0.5)");
    }

    #[test]
    fn avg_size_of_two() {
        let r = BTreeMap::from([(0, BTreeSet::from([0, 1])), (5, BTreeSet::from([5, 1, 2, 3]))]);
        assert_eq!(avg_size(&r).unwrap(), 3.0);
        assert!(avg_size(&BTreeMap::new()).is_err());
    }

    #[test]
    fn default_p_uses_reference_sizes() {
        assert!((default_p("cora", 34.8) - 0.5).abs() < 1e-12);
        assert_eq!(default_p("unknown", 10.0), 0.5);
        assert_eq!(default_p("amazon", 1.0), 1.0);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
