use std::collections::{BTreeMap, BTreeSet};

use ndarray::{array, Array1, Array2};
use tagx_core::backend::{embed_all, LlmBackend, MockBackend};
use tagx_core::eval::{
    avg_size, baseline_node, baseline_random, fidelity, run_benchmark, BenchmarkConfig, BenchmarkInputs, EvalError,
    Method, ProjectorEcho,
};
use tagx_core::explain::{explain_node, ExplainContext, ExplainMode, PipelineConfig};
use tagx_core::gcn::{train_gcn, GcnModel, TrainConfig};
use tagx_core::graph::{GraphParts, NodeId, Splits, TextAttributedGraph};
use tagx_core::projector::{train_projector, ProjectorModel, ProjectorTrainConfig, TextEmbeddingTable};
use tagx_core::prompt::PromptTemplate;
use tagx_core::synthetic::{homophilous_graph, two_clique_graph, HomophilousSpec};

/// Dense three-layer GCN forward pass written out from scratch:
/// `Â = D^-1/2 (A + I) D^-1/2`, two rectified layers, linear logits.
fn oracle_predictions(model: &GcnModel, features: &Array2<f64>, edges: &[(NodeId, NodeId)]) -> Vec<usize> {
    let n = features.nrows();
    let mut a = Array2::<f64>::eye(n);
    for &(u, v) in edges {
        a[[u, v]] = 1.0;
        a[[v, u]] = 1.0;
    }
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    let a_hat = Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] / (deg[i] * deg[j]).sqrt());
    let layer = |h: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| a_hat.dot(&h.dot(w)) + b;
    let relu = |m: Array2<f64>| m.mapv(|v| v.max(0.0));
    let h1 = relu(layer(features, &model.weights[0], &model.biases[0]));
    let h2 = relu(layer(&h1, &model.weights[1], &model.biases[1]));
    let logits = layer(&h2, &model.weights[2], &model.biases[2]);
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &x) in r.iter().enumerate() {
                if x > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn oracle_agrees(model: &GcnModel, g: &TextAttributedGraph, full: &[usize], v: NodeId, set: &BTreeSet<NodeId>) -> bool {
    let keep: Vec<NodeId> = set.iter().copied().collect();
    let local = |u: NodeId| keep.iter().position(|&k| k == u);
    let feats = g.features().select(ndarray::Axis(0), &keep);
    let edges: Vec<(NodeId, NodeId)> = g
        .edges()
        .iter()
        .filter_map(|&(a, b)| Some((local(a)?, local(b)?)))
        .collect();
    oracle_predictions(model, &feats, &edges)[local(v).unwrap()] == full[v]
}

fn path4(x: [f64; 4]) -> TextAttributedGraph {
    TextAttributedGraph::from_parts(GraphParts {
        name: "path".into(),
        texts: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        features: Array2::from_shape_vec((4, 1), x.to_vec()).unwrap(),
        edges: vec![(0, 1), (1, 2), (2, 3)],
        labels: vec![0; 4],
        splits: Splits::default(),
        class_names: vec!["hi".into(), "lo".into()],
    })
    .unwrap()
}

#[test]
fn singleton_fidelity_on_a_hand_built_path() {
    // One hidden unit, identity layers, logits (h, 1.5 - h): class 0 iff h >= 0.75.
    let mut model = GcnModel::zeros(1, 1, 2);
    model.weights = [array![[1.0]], array![[1.0]], array![[1.0, -1.0]]];
    model.biases[2] = array![0.0, 1.5];
    let g = path4([2.0, 0.0, 0.0, 0.5]);
    // On the full path h = Â³x ≈ (0.722, 0.737, 0.482, 0.285), all class 1.
    // Alone, each node keeps h = x, giving classes (0, 1, 1, 1).
    let full = model.forward(&g).unwrap().predictions();
    assert_eq!(full, vec![1, 1, 1, 1]);
    assert_eq!(full, oracle_predictions(&model, g.features(), g.edges()));
    let singletons: BTreeMap<NodeId, BTreeSet<NodeId>> = (0..4).map(|v| (v, baseline_node(v))).collect();
    assert_eq!(fidelity(&model, &g, &singletons).unwrap(), 0.75);
    let by_oracle = (0..4).filter(|&v| oracle_agrees(&model, &g, &full, v, &singletons[&v])).count();
    assert_eq!(by_oracle, 3);
}

#[test]
fn identity_explanations_are_perfectly_faithful() {
    let g = homophilous_graph(&HomophilousSpec::default());
    for seed in 0..3 {
        let model = GcnModel::init(g.feature_dim(), 8, g.num_classes(), seed, "synthetic");
        let everything: BTreeSet<NodeId> = (0..g.num_nodes()).collect();
        let results: BTreeMap<NodeId, BTreeSet<NodeId>> = (0..g.num_nodes()).map(|v| (v, everything.clone())).collect();
        assert_eq!(fidelity(&model, &g, &results).unwrap(), 1.0);
    }
}

#[test]
fn fidelity_preconditions() {
    let g = path4([1.0, 1.0, 1.0, 1.0]);
    let model = GcnModel::zeros(1, 1, 2);
    let bad = BTreeMap::from([(0, BTreeSet::from([1, 2]))]);
    assert!(matches!(fidelity(&model, &g, &bad), Err(EvalError::TargetMissing(0))));
    assert!(matches!(fidelity(&model, &g, &BTreeMap::new()), Err(EvalError::Empty)));
}

fn star(leaves: usize) -> TextAttributedGraph {
    let n = leaves + 1;
    TextAttributedGraph::from_parts(GraphParts {
        name: "star".into(),
        texts: vec!["x".into(); n],
        features: Array2::zeros((n, 1)),
        edges: (1..n).map(|u| (0, u)).collect(),
        labels: vec![0; n],
        splits: Splits::default(),
        class_names: vec!["c".into()],
    })
    .unwrap()
}

#[test]
fn random_baseline_sizes() {
    let g = star(20);
    assert_eq!(g.computation_tree(0, 2).unwrap().unique_nodes.len(), 21);
    let half = baseline_random(&g, 0, 0.5, 2, 3).unwrap();
    assert_eq!(half.len(), 11);
    assert!(half.contains(&0));
    assert_eq!(half, baseline_random(&g, 0, 0.5, 2, 3).unwrap());
    let all = baseline_random(&g, 0, 1.0, 2, 9).unwrap();
    assert_eq!(all, (0..=20).collect());
    // a leaf reaches everything within two hops too
    assert_eq!(baseline_random(&g, 7, 1.0, 2, 0).unwrap().len(), 21);
    assert!(baseline_random(&g, 0, 0.0, 2, 0).is_err());
    assert!(baseline_random(&g, 0, 1.01, 2, 0).is_err());

    let sets: BTreeSet<BTreeSet<NodeId>> = (0..10).map(|s| baseline_random(&g, 0, 0.5, 2, s).unwrap()).collect();
    assert!(sets.len() > 1, "different seeds should draw different subsets");
}

#[test]
fn node_baseline_has_unit_size() {
    let results: BTreeMap<NodeId, BTreeSet<NodeId>> = (0..9).map(|v| (v, baseline_node(v))).collect();
    assert_eq!(avg_size(&results).unwrap(), 1.0);
    assert_eq!(baseline_node(4), BTreeSet::from([4]));
}

struct Trained {
    graph: TextAttributedGraph,
    gnn: GcnModel,
    projector: ProjectorModel,
    backend: MockBackend,
}

fn train_on(graph: TextAttributedGraph) -> Trained {
    let (gnn, _) = train_gcn(&graph, &TrainConfig::default()).unwrap();
    let backend = MockBackend::default();
    let texts = TextEmbeddingTable::new(embed_all(&backend, graph.texts()).unwrap(), "mock").unwrap();
    let emb = gnn.forward(&graph).unwrap().embeddings;
    let nodes: Vec<NodeId> = (0..graph.num_nodes()).collect();
    let (projector, _) = train_projector(&emb, &texts, &nodes, &ProjectorTrainConfig::default()).unwrap();
    Trained {
        graph,
        gnn,
        projector,
        backend,
    }
}

fn inputs<'a>(t: &'a Trained, template: &'a PromptTemplate) -> BenchmarkInputs<'a> {
    BenchmarkInputs {
        graph: &t.graph,
        gnn: &t.gnn,
        gnn_id: "test".into(),
        projector: Some((&t.projector, ProjectorEcho { beta: 0.5, tau: 0.1, k: 4 })),
        backend: Some(&t.backend as &dyn LlmBackend),
        template: Some(template),
        theta: Some(t.backend.theta),
    }
}

#[test]
fn two_cliques_are_explained_faithfully() {
    let t = train_on(two_clique_graph(6));
    let template = PromptTemplate::builtin("synthetic").unwrap();
    let cfg = BenchmarkConfig {
        methods: vec![Method::Llm(ExplainMode::LlmPrPo)],
        workers: 2,
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(&inputs(&t, &template), &cfg).unwrap();
    let row = report.row("llm_pr_po").unwrap();
    assert_eq!(row.num_targets, 12);
    assert_eq!(row.failures, 0);
    assert_eq!(row.fidelity, Some(1.0));

    // recompute every explanation and check it with the independent forward pass
    let full = oracle_predictions(&t.gnn, t.graph.features(), t.graph.edges());
    assert_eq!(full, t.gnn.forward(&t.graph).unwrap().predictions());
    let ctx = ExplainContext::new(&t.graph, &t.gnn, Some(&t.projector), &t.backend, &template).unwrap();
    let pcfg = PipelineConfig {
        p: report.config.p,
        ..PipelineConfig::default()
    };
    for v in 0..t.graph.num_nodes() {
        let e = explain_node(&ctx, v, &pcfg).unwrap();
        assert!(oracle_agrees(&t.gnn, &t.graph, &full, v, &e.s_v), "node {v}: {:?}", e.s_v);
    }
}

#[test]
fn reports_are_deterministic_and_complete() {
    let t = train_on(homophilous_graph(&HomophilousSpec::default()));
    let template = PromptTemplate::builtin("synthetic").unwrap();
    let methods: Vec<Method> = ["node", "random(0.5)", "random(0.25)", "llm_text", "llm_pr", "llm_pr_po"]
        .iter()
        .map(|m| m.parse().unwrap())
        .collect();
    let cfg = BenchmarkConfig {
        methods,
        workers: 3,
        exclude_labels: vec![2],
        ..BenchmarkConfig::default()
    };
    let run = || run_benchmark(&inputs(&t, &template), &cfg).unwrap();
    let (a, b) = (run(), run());
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.write(dir_a.path(), 1.0).unwrap();
    b.write(dir_b.path(), 2.0).unwrap();
    let bytes = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(bytes(&dir_a, "report.json"), bytes(&dir_b, "report.json"));
    assert_eq!(bytes(&dir_a, "report.md"), bytes(&dir_b, "report.md"));
    assert!(dir_a.path().join("report.meta.json").exists());

    assert_eq!(a.populations.len(), 2);
    assert_eq!(a.populations[0].name, "filtered");
    assert_eq!(a.populations[1].name, "all");
    let names: Vec<&str> = a.rows().iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["node", "random(0.5)", "random(0.25)", "llm_text", "llm_pr", "llm_pr_po"]);
    for pop in &a.populations {
        for r in &pop.rows {
            let f = r.fidelity.unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(r.mean_size.unwrap() >= 1.0);
        }
    }
    assert_eq!(a.row("node").unwrap().mean_size, Some(1.0));
    assert_eq!(a.row("random(0.5)").unwrap().seeds, vec![0, 1, 2, 3, 4]);
    let label_two = t.graph.splits().test.iter().filter(|&&v| t.graph.label(v) == 2).count();
    assert!(label_two > 0);
    assert_eq!(a.populations[0].num_targets + label_two, a.populations[1].num_targets);
    assert!(!a.has_empty_rows());
    let md = a.to_markdown();
    assert!(md.contains("| random(0.5) |"));
    assert!(md.contains("±"));
}

#[test]
fn llm_rows_need_their_inputs() {
    let g = homophilous_graph(&HomophilousSpec::default());
    let gnn = GcnModel::init(g.feature_dim(), 8, 3, 0, "synthetic");
    let bare = BenchmarkInputs {
        graph: &g,
        gnn: &gnn,
        gnn_id: "x".into(),
        projector: None,
        backend: None,
        template: None,
        theta: None,
    };
    let cfg = BenchmarkConfig {
        methods: vec![Method::Llm(ExplainMode::LlmText)],
        ..BenchmarkConfig::default()
    };
    assert!(matches!(run_benchmark(&bare, &cfg), Err(EvalError::MissingInput(..))));

    let cfg = BenchmarkConfig {
        exclude_labels: vec![0, 1, 2],
        ..BenchmarkConfig::default()
    };
    assert!(matches!(run_benchmark(&bare, &cfg), Err(EvalError::EmptyPopulation)));

    let report = run_benchmark(&bare, &BenchmarkConfig::default()).unwrap();
    assert_eq!(report.rows().len(), 3);
    assert_eq!(report.config.backend, None);
    assert_eq!(report.populations[0].num_targets, g.splits().test.len());
}
