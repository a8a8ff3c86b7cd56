mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use tagx_core::backend::{embed_all, fnv1a, BridgeClient, LlmBackend, MockBackend};
use tagx_core::eval::{
    default_p, run_benchmark, BenchmarkConfig, BenchmarkInputs, Method, Population, ProjectorEcho,
};
use tagx_core::explain::{
    explain_node, to_dot, ExplainContext, ExplainMode, ExplanationRecord, PipelineConfig,
};
use tagx_core::gcn::{self, train_gcn, GcnModel, TrainConfig};
use tagx_core::graph::{load_tag_dataset, write_tag_dataset, LoadOptions, NodeId, TextAttributedGraph};
use tagx_core::projector::{
    self, train_projector, ProjectorArch, ProjectorCheckpoint, ProjectorModel, ProjectorTrainConfig,
    TextEmbeddingTable,
};
use tagx_core::prompt::PromptTemplate;
use tagx_core::synthetic::{gaussian_matrix, homophilous_graph, random_connected_graph, HomophilousSpec};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(
    name = "tagx",
    version,
    about = "Explain GCN node predictions on text-attributed graphs with a language model"
)]
struct Cli {
    /// TOML file with defaults for any option below
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parallel explanation targets
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a dataset directory and print what was read
    IngestCheck(DatasetArgs),
    /// Train the 3-layer GCN and write `<name>.gcn.json`
    TrainGnn(TrainGnnArgs),
    /// Train the soft-prompt projector and write `<name>.proj.json`
    TrainProjector(TrainProjectorArgs),
    /// Explain individual nodes and write `<node>.expl.json`
    Explain(ExplainArgs),
    /// Run the fidelity/size benchmark and write report.json and report.md
    Evaluate(EvaluateArgs),
    /// Render an explanation as Graphviz DOT
    ExportDot(ExportDotArgs),
    /// Compare analytic gradients with finite differences on small instances
    GradCheck(GradCheckArgs),
    /// Write a small synthetic three-topic dataset for smoke runs
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Dataset directory (meta.json, nodes.jsonl, edges.tsv)
    #[arg(long)]
    dataset: PathBuf,
    /// Override the dataset name
    #[arg(long)]
    name: Option<String>,
    /// Keep only the first N nodes
    #[arg(long)]
    max_nodes: Option<usize>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Bridge,
}

#[derive(Args, Debug)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Model server base URL (selects the bridge backend)
    #[arg(long, env = "TAGX_BRIDGE_URL")]
    bridge_url: Option<String>,
    /// Mock embedding width
    #[arg(long)]
    mock_h: Option<usize>,
    #[arg(long)]
    mock_seed: Option<u64>,
    /// Mock support threshold on cosine similarity
    #[arg(long)]
    theta: Option<f64>,
    /// Make the mock name these extra ids in every response
    #[arg(long, value_delimiter = ',', hide = true)]
    hallucinate: Vec<NodeId>,
}

#[derive(Args, Debug)]
struct TrainGnnArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainProjectorArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// GCN checkpoint
    #[arg(long)]
    gnn: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Use tau for both softmaxes of the contrastive loss
    #[arg(long)]
    shared_temperature: bool,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    tree_depth: Option<usize>,
    /// Explanation size ratio for neutral padding
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Prompt template JSON (defaults to the bundled one for the dataset)
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    include_text_in_soft_mode: bool,
    /// Count tree size with repeated walks
    #[arg(long)]
    count_tree_repetitions: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum ModeArg {
    LlmText,
    LlmPr,
    LlmPrPo,
}

impl From<ModeArg> for ExplainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::LlmText => ExplainMode::LlmText,
            ModeArg::LlmPr => ExplainMode::LlmPr,
            ModeArg::LlmPrPo => ExplainMode::LlmPrPo,
        }
    }
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    gnn: PathBuf,
    /// Projector checkpoint (needed for the soft-prompt modes)
    #[arg(long)]
    projector: Option<PathBuf>,
    /// Nodes to explain
    #[arg(long, value_delimiter = ',', required = true)]
    nodes: Vec<NodeId>,
    #[arg(long, value_enum, default_value = "llm-pr-po")]
    mode: ModeArg,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    gnn: PathBuf,
    #[arg(long)]
    projector: Option<PathBuf>,
    /// Comma-separated: node, random(q), llm_text, llm_pr, llm_pr_po
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    num_targets: Option<usize>,
    /// test (default) or all
    #[arg(long)]
    population: Option<String>,
    #[arg(long, value_delimiter = ',')]
    exclude_labels: Vec<usize>,
    #[arg(long)]
    random_seeds: Option<usize>,
}

#[derive(Args, Debug)]
struct ExportDotArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// An `<node>.expl.json` file
    #[arg(long)]
    explanation: PathBuf,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random 6-node instances per check
    #[arg(long, default_value_t = 3)]
    instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Dataset directory to create
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    nodes_per_class: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref()).context("config")?;
    let workers = cli.workers.or(file.workers).unwrap_or(1).max(1);
    match cli.command {
        Command::IngestCheck(a) => ingest_check(&a),
        Command::TrainGnn(a) => cmd_train_gnn(&a, &file),
        Command::TrainProjector(a) => cmd_train_projector(&a, &file),
        Command::Explain(a) => cmd_explain(&a, &file, workers),
        Command::Evaluate(a) => cmd_evaluate(&a, &file, workers),
        Command::ExportDot(a) => cmd_export_dot(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn load_dataset(a: &DatasetArgs) -> Result<TextAttributedGraph> {
    let opts = LoadOptions {
        name: a.name.clone(),
        max_nodes: a.max_nodes,
        split_seed: 0,
    };
    let (graph, _) = load_tag_dataset(&a.dataset, &opts)
        .with_context(|| format!("ingest: loading {}", a.dataset.display()))?;
    Ok(graph)
}

fn out_dir(o: &OutArgs, file: &FileConfig) -> Result<PathBuf> {
    let dir = o
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest_check(a: &DatasetArgs) -> Result<ExitCode> {
    let opts = LoadOptions {
        name: a.name.clone(),
        max_nodes: a.max_nodes,
        split_seed: 0,
    };
    let (_, report) = load_tag_dataset(&a.dataset, &opts)
        .with_context(|| format!("ingest: loading {}", a.dataset.display()))?;
    println!(
        "ingest-check: {} nodes={} edges={} (edge lines {}) classes={} d={} train/val/test={}/{}/{}",
        report.name,
        report.num_nodes,
        report.num_edges,
        report.edge_lines,
        report.num_classes,
        report.feature_dim,
        report.train,
        report.val,
        report.test
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_gnn(a: &TrainGnnArgs, file: &FileConfig) -> Result<ExitCode> {
    let graph = load_dataset(&a.data)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.lr.or(file.gnn.learning_rate).unwrap_or(defaults.learning_rate),
        epochs: a.epochs.or(file.gnn.epochs).unwrap_or(defaults.epochs),
        seed: a.out.seed.or(file.seed).unwrap_or(defaults.seed),
        hidden_dim: a.hidden_dim.or(file.gnn.hidden_dim),
    };
    let dir = out_dir(&a.out, file)?;
    let (model, report) = train_gcn(&graph, &cfg).context("train-gnn: training")?;
    let path = dir.join(format!("{}.gcn.json", graph.name()));
    model.save(&path).context("train-gnn: saving checkpoint")?;
    write_json(
        &dir.join(format!("{}.gcn.run.json", graph.name())),
        &json!({ "config": cfg, "report": report }),
    )?;
    println!(
        "train-gnn: train {:.3} val {:.3} test {:.3} (hidden {}) -> {}",
        report.accuracy.train,
        report.accuracy.val,
        report.accuracy.test,
        report.hidden_dim,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

struct ResolvedBackend {
    backend: Box<dyn LlmBackend>,
    theta: Option<f64>,
    echo: serde_json::Value,
}

fn make_backend(a: &BackendArgs, file: &FileConfig) -> Result<ResolvedBackend> {
    let url = a.bridge_url.clone().or_else(|| file.backend.url.clone());
    let kind = match (a.backend, file.backend.kind.as_deref()) {
        (Some(k), _) => k,
        (None, Some("mock")) => BackendKind::Mock,
        (None, Some("bridge")) => BackendKind::Bridge,
        (None, Some(other)) => bail!("config: unknown backend kind {other:?}"),
        (None, None) if url.is_some() => BackendKind::Bridge,
        (None, None) => BackendKind::Mock,
    };
    match kind {
        BackendKind::Mock => {
            let d = MockBackend::default();
            let mock = MockBackend {
                h: a.mock_h.or(file.backend.h).unwrap_or(d.h),
                seed: a.mock_seed.or(file.backend.seed).unwrap_or(d.seed),
                theta: a.theta.or(file.backend.theta).unwrap_or(d.theta),
                hallucinate_ids: a.hallucinate.clone(),
                ..d
            };
            let echo = json!({ "kind": "mock", "h": mock.h, "seed": mock.seed, "theta": mock.theta });
            Ok(ResolvedBackend {
                theta: Some(mock.theta),
                backend: Box::new(mock),
                echo,
            })
        }
        BackendKind::Bridge => {
            let url = url.ok_or_else(|| anyhow!("backend: the bridge needs --bridge-url or TAGX_BRIDGE_URL"))?;
            let timeout = Duration::from_secs(file.backend.timeout_secs.unwrap_or(600));
            let client = BridgeClient::connect(&url, timeout).context("backend: connecting to the bridge")?;
            let echo = json!({ "kind": "bridge", "url": url, "descriptor": client.descriptor() });
            Ok(ResolvedBackend {
                backend: Box::new(client),
                theta: None,
                echo,
            })
        }
    }
}

fn cmd_train_projector(a: &TrainProjectorArgs, file: &FileConfig) -> Result<ExitCode> {
    let graph = load_dataset(&a.data)?;
    let gnn = GcnModel::load(&a.gnn).context("train-projector: loading GCN checkpoint")?;
    let rb = make_backend(&a.backend, file)?;
    let d = ProjectorTrainConfig::default();
    let f = &file.projector;
    let cfg = ProjectorTrainConfig {
        k: a.k.or(f.k).unwrap_or(d.k),
        beta: a.beta.or(f.beta).unwrap_or(d.beta),
        tau: a.tau.or(f.tau).unwrap_or(d.tau),
        learning_rate: a.lr.or(f.learning_rate).unwrap_or(d.learning_rate),
        epochs: a.epochs.or(f.epochs).unwrap_or(d.epochs),
        batch: a.batch.or(f.batch).unwrap_or(d.batch),
        seed: a.out.seed.or(file.seed).unwrap_or(d.seed),
        shared_temperature: a.shared_temperature || f.shared_temperature.unwrap_or(false),
        arch: ProjectorArch::Mlp,
        eval_cap: d.eval_cap,
    };
    let dir = out_dir(&a.out, file)?;
    let forward = gnn.forward(&graph).context("train-projector: GCN forward pass")?;
    let rows = embed_all(rb.backend.as_ref(), graph.texts()).context("train-projector: embedding node texts")?;
    let texts = TextEmbeddingTable::new(rows, &rb.backend.descriptor().id)
        .context("train-projector: text embeddings")?;
    let nodes: Vec<NodeId> = (0..graph.num_nodes()).collect();
    let (model, report) = train_projector(&forward.embeddings, &texts, &nodes, &cfg)
        .context("train-projector: training")?;
    let path = dir.join(format!("{}.proj.json", graph.name()));
    model.save(&path, &cfg).context("train-projector: saving checkpoint")?;
    write_json(
        &dir.join(format!("{}.proj.run.json", graph.name())),
        &json!({ "config": cfg, "backend": rb.echo, "report": report }),
    )?;
    println!(
        "train-projector: loss {:.4} -> {:.4} (context {:.4}, contrast {:.4}, best epoch {}) -> {}",
        report.initial.total,
        report.best.total,
        report.best.context,
        report.best.contrast,
        report.best_epoch,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_projector(path: Option<&Path>) -> Result<Option<(ProjectorModel, ProjectorCheckpoint)>> {
    path.map(|p| {
        ProjectorModel::load(p).with_context(|| format!("projection: loading {}", p.display()))
    })
    .transpose()
}

fn resolve_template(pipeline: &PipelineArgs, file: &FileConfig, graph: &TextAttributedGraph) -> Result<PromptTemplate> {
    if let Some(path) = pipeline.template.as_ref().or(file.pipeline.template.as_ref()) {
        return PromptTemplate::load(path).context("prompt: loading template");
    }
    Ok(PromptTemplate::builtin(graph.name()).unwrap_or_else(|| {
        log::warn!("no bundled template for {:?}; using the generic one", graph.name());
        PromptTemplate::builtin("synthetic").expect("generic template is bundled")
    }))
}

fn pipeline_config(a: &PipelineArgs, file: &FileConfig, seed: u64, mode: ExplainMode, p: f64) -> PipelineConfig {
    let d = PipelineConfig::default();
    let f = &file.pipeline;
    let mut generation = d.generation.clone();
    generation.max_tokens = a.max_tokens.or(f.max_tokens).unwrap_or(generation.max_tokens);
    PipelineConfig {
        tree_depth: a.tree_depth.or(f.tree_depth).unwrap_or(d.tree_depth),
        mode,
        p,
        seed,
        generation,
        include_text_in_soft_mode: a.include_text_in_soft_mode || f.include_text_in_soft_mode.unwrap_or(false),
        count_tree_repetitions: a.count_tree_repetitions || f.count_tree_repetitions.unwrap_or(false),
    }
}

fn check_widths(proj: Option<&ProjectorModel>, gnn: &GcnModel, backend: &dyn LlmBackend) -> Result<()> {
    if let Some(p) = proj {
        if p.m != gnn.hidden_dim() {
            bail!("projection: projector expects {}-dim GNN embeddings, GCN produces {}", p.m, gnn.hidden_dim());
        }
        let h = backend.descriptor().h;
        if p.h != h {
            bail!("projection: projector emits width {}, backend expects {h}", p.h);
        }
    }
    Ok(())
}

fn cmd_explain(a: &ExplainArgs, file: &FileConfig, workers: usize) -> Result<ExitCode> {
    let graph = load_dataset(&a.data)?;
    let gnn = GcnModel::load(&a.gnn).context("explain: loading GCN checkpoint")?;
    let proj = load_projector(a.projector.as_deref())?;
    let rb = make_backend(&a.backend, file)?;
    check_widths(proj.as_ref().map(|(m, _)| m), &gnn, rb.backend.as_ref())?;
    let template = resolve_template(&a.pipeline, file, &graph)?;
    for &v in &a.nodes {
        graph.check_node(v).context("explain: node selection")?;
    }
    let seed = a.out.seed.or(file.seed).unwrap_or(0);
    let mode = ExplainMode::from(a.mode);
    let depth = a.pipeline.tree_depth.or(file.pipeline.tree_depth).unwrap_or(2);
    let p = match a.pipeline.p.or(file.pipeline.p) {
        Some(p) => p,
        None => {
            let mut total = 0.0;
            for &v in &a.nodes {
                total += graph.computation_tree(v, depth)?.unique_nodes.len() as f64;
            }
            default_p(graph.name(), total / a.nodes.len() as f64)
        }
    };
    let cfg = pipeline_config(&a.pipeline, file, seed, mode, p);
    let dir = out_dir(&a.out, file)?;

    let ctx = ExplainContext::new(&graph, &gnn, proj.as_ref().map(|(m, _)| m), rb.backend.as_ref(), &template)?;
    let pool = build_pool(workers, rb.backend.as_ref())?;
    let results: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        a.nodes.par_iter().map(|&v| (v, explain_node(&ctx, v, &cfg))).collect()
    });
    let mut sizes = Vec::new();
    for (v, res) in results {
        let e = res.with_context(|| format!("explain: node {v}"))?;
        write_json(&dir.join(format!("{v}.expl.json")), &ExplanationRecord::from(&e))?;
        sizes.push(e.s_v.len());
    }
    write_json(
        &dir.join("explain.run.json"),
        &json!({ "pipeline": cfg, "backend": rb.echo, "gnn": a.gnn, "projector": a.projector }),
    )?;
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    println!(
        "explain: {} node(s), mode {}, p {:.3}, mean |S_v| {:.2} -> {}",
        sizes.len(),
        mode.name(),
        p,
        mean,
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn build_pool(workers: usize, backend: &dyn LlmBackend) -> Result<rayon::ThreadPool> {
    let limit = backend.descriptor().max_concurrency.max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.min(limit))
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(format!("{name}#{:016x}", fnv1a(&bytes)))
}

fn cmd_evaluate(a: &EvaluateArgs, file: &FileConfig, workers: usize) -> Result<ExitCode> {
    let started = Instant::now();
    let graph = load_dataset(&a.data)?;
    let gnn = GcnModel::load(&a.gnn).context("evaluate: loading GCN checkpoint")?;
    let proj = load_projector(a.projector.as_deref())?;
    let e = &file.eval;

    let method_names = if a.methods.is_empty() {
        e.methods
            .clone()
            .unwrap_or_else(|| vec!["node".into(), "random(0.5)".into(), "random(0.25)".into()])
    } else {
        a.methods.clone()
    };
    let methods = method_names
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .context("evaluate: methods")?;
    let needs_llm = methods.iter().any(|m| matches!(m, Method::Llm(_)));

    let rb = if needs_llm { Some(make_backend(&a.backend, file)?) } else { None };
    if let Some(rb) = &rb {
        check_widths(proj.as_ref().map(|(m, _)| m), &gnn, rb.backend.as_ref())?;
    }
    let template = if needs_llm {
        Some(resolve_template(&a.pipeline, file, &graph)?)
    } else {
        None
    };
    let population = match a.population.as_deref().or(e.population.as_deref()) {
        None | Some("test") => Population::Test,
        Some("all") => Population::All,
        Some(other) => bail!("evaluate: unknown population {other:?} (expected test or all)"),
    };
    let seed = a.out.seed.or(file.seed).unwrap_or(0);
    let d = BenchmarkConfig::default();
    let cfg = BenchmarkConfig {
        methods,
        num_targets: a.num_targets.or(e.num_targets),
        seed,
        random_seeds: a.random_seeds.or(e.random_seeds).unwrap_or(d.random_seeds),
        pipeline: pipeline_config(&a.pipeline, file, seed, ExplainMode::LlmPrPo, 0.5),
        p: a.pipeline.p.or(file.pipeline.p),
        workers,
        exclude_labels: if a.exclude_labels.is_empty() {
            e.exclude_labels.clone().unwrap_or_default()
        } else {
            a.exclude_labels.clone()
        },
        population,
    };
    let inputs = BenchmarkInputs {
        graph: &graph,
        gnn: &gnn,
        gnn_id: checkpoint_id(&a.gnn)?,
        projector: proj.as_ref().map(|(m, c)| {
            (
                m,
                ProjectorEcho {
                    beta: c.beta,
                    tau: c.tau,
                    k: c.k,
                },
            )
        }),
        backend: rb.as_ref().map(|r| r.backend.as_ref()),
        template: template.as_ref(),
        theta: rb.as_ref().and_then(|r| r.theta),
    };
    let report = run_benchmark(&inputs, &cfg).context("evaluate: benchmark")?;
    let dir = out_dir(&a.out, file)?;
    report
        .write(&dir, started.elapsed().as_secs_f64())
        .context("evaluate: writing report")?;

    let summary: Vec<String> = report
        .rows()
        .iter()
        .map(|r| match (r.fidelity, r.mean_size) {
            (Some(f), Some(s)) => format!("{} fidelity {:.3} size {:.2}", r.method, f, s),
            _ => format!("{} no successful targets", r.method),
        })
        .collect();
    println!("evaluate: {} -> {}", summary.join("; "), dir.display());
    if report.has_empty_rows() {
        eprintln!("error: evaluate: some methods produced no successful targets");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_dot(a: &ExportDotArgs) -> Result<ExitCode> {
    let graph = load_dataset(&a.data)?;
    let text = std::fs::read_to_string(&a.explanation)
        .with_context(|| format!("export-dot: reading {}", a.explanation.display()))?;
    let record: ExplanationRecord = serde_json::from_str(&text).context("export-dot: parsing explanation")?;
    let members: BTreeSet<NodeId> = record.s_v.iter().copied().collect();
    if let Some(&bad) = members.iter().find(|&&v| v >= graph.num_nodes()) {
        bail!("export-dot: explanation names node {bad}, dataset has {} nodes", graph.num_nodes());
    }
    let dot = to_dot(&graph, &record);
    match &a.out {
        Some(path) => {
            std::fs::write(path, &dot).with_context(|| format!("writing {}", path.display()))?;
            println!("export-dot: {} nodes -> {}", members.len(), path.display());
        }
        None => print!("{dot}"),
    }
    Ok(ExitCode::SUCCESS)
}

/// Overwrite a bias vector with small Gaussian values.
fn jitter(bias: &mut ndarray::Array1<f64>, seed: u64) {
    let n = bias.len();
    bias.assign(&gaussian_matrix(1, n, seed).row(0).mapv(|x| 0.1 * x));
}

fn cmd_grad_check(a: &GradCheckArgs) -> Result<ExitCode> {
    const TOLERANCE: f64 = 1e-4;
    let mut worst_gcn = 0.0f64;
    let mut worst_proj = 0.0f64;
    for i in 0..a.instances as u64 {
        let seed = a.seed.wrapping_add(i);
        let graph = random_connected_graph(6, 5, 3, 0.3, seed);
        let mut model = GcnModel::init(5, 4, 3, seed, graph.name());
        // nonzero biases so no pre-activation sits exactly on a ReLU kink
        for (layer, b) in model.biases.iter_mut().enumerate() {
            jitter(b, seed ^ (layer as u64 + 2));
        }
        worst_gcn = worst_gcn.max(gcn::gradient_check(&model, &graph, a.eps).context("grad-check: gcn")?);

        let mock = MockBackend::new(6, seed);
        let texts = embed_all(&mock, graph.texts())?;
        // Gaussian stand-ins for GCN embeddings: post-ReLU rows are often
        // exactly zero, which parks hidden units on their kink
        let f = gaussian_matrix(6, 4, seed);
        for arch in [ProjectorArch::Mlp, ProjectorArch::Linear] {
            for beta in [0.0, 0.5, 1.0] {
                let model = match arch {
                    ProjectorArch::Mlp => {
                        let mut m = ProjectorModel::new_mlp(4, 2, 6, seed);
                        if let projector::ProjectorParams::Mlp { b1, b2, .. } = &mut m.params {
                            jitter(b1, seed ^ 7);
                            jitter(b2, seed ^ 8);
                        }
                        m
                    }
                    ProjectorArch::Linear => {
                        ProjectorModel::linear(0.3 * gaussian_matrix(4, 12, seed ^ 1), 2, 6)?
                    }
                };
                let cfg = ProjectorTrainConfig {
                    k: 2,
                    beta,
                    tau: 0.5,
                    ..ProjectorTrainConfig::default()
                };
                let err = projector::gradient_check(&model, &f, &texts, &cfg, a.eps)
                    .context("grad-check: projector")?;
                worst_proj = worst_proj.max(err);
            }
        }
    }
    let worst = worst_gcn.max(worst_proj);
    let verdict = if worst < TOLERANCE { "ok" } else { "FAILED" };
    println!(
        "grad-check: max relative error {worst:.3e} (gcn {worst_gcn:.3e}, projector {worst_proj:.3e}) over {} instance(s): {verdict}",
        a.instances
    );
    Ok(if worst < TOLERANCE {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<ExitCode> {
    let graph = homophilous_graph(&HomophilousSpec {
        nodes_per_class: a.nodes_per_class,
        seed: a.seed,
        ..HomophilousSpec::default()
    });
    write_tag_dataset(&graph, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "synth: {} nodes, {} edges -> {}",
        graph.num_nodes(),
        graph.num_edges(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
