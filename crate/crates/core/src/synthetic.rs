//! Small generated graphs for tests, demos and smoke runs.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{GraphParts, NodeId, Splits, TextAttributedGraph};

const TOPICS: [(&str, [&str; 8]); 3] = [
    (
        "astronomy",
        ["star", "galaxy", "orbit", "telescope", "nebula", "planet", "comet", "cosmic"],
    ),
    (
        "cooking",
        ["recipe", "oven", "flour", "sauce", "simmer", "garlic", "pastry", "spice"],
    ),
    (
        "football",
        ["goal", "striker", "league", "match", "keeper", "tackle", "stadium", "penalty"],
    ),
];

const FILLER: [&str; 6] = ["study", "review", "notes", "guide", "report", "overview"];

/// Knobs for [`homophilous_graph`].
#[derive(Debug, Clone)]
pub struct HomophilousSpec {
    pub nodes_per_class: usize,
    pub feature_dim: usize,
    /// Same-class edges drawn per node.
    pub intra_edges: usize,
    /// Cross-class edges drawn per node.
    pub inter_edges: usize,
    /// Standard deviation of the feature noise around the class prototype.
    pub noise: f64,
    pub seed: u64,
}

impl Default for HomophilousSpec {
    fn default() -> Self {
        HomophilousSpec {
            nodes_per_class: 20,
            feature_dim: 16,
            intra_edges: 2,
            inter_edges: 2,
            noise: 0.7,
            seed: 7,
        }
    }
}

/// Three topical communities. Features are a noisy class prototype, texts
/// mix topic keywords with generic filler, and most edges stay inside a
/// community.
pub fn homophilous_graph(spec: &HomophilousSpec) -> TextAttributedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = TOPICS.len();
    let n = classes * spec.nodes_per_class;
    let labels: Vec<usize> = (0..n).map(|v| v / spec.nodes_per_class).collect();

    let noise = Normal::new(0.0, spec.noise).expect("valid std");
    let prototypes = Array2::from_shape_fn((classes, spec.feature_dim), |(c, j)| {
        if j % classes == c {
            1.0
        } else {
            0.0
        }
    });
    let features = Array2::from_shape_fn((n, spec.feature_dim), |(v, j)| {
        prototypes[[labels[v], j]] + noise.sample(&mut rng)
    });

    let texts = labels
        .iter()
        .map(|&c| {
            let words = TOPICS[c].1.choose_multiple(&mut rng, 4).copied();
            let filler = FILLER.choose_multiple(&mut rng, 2).copied();
            words.chain(filler).collect::<Vec<_>>().join(" ")
        })
        .collect();

    let mut seen = std::collections::BTreeSet::new();
    let mut edges = Vec::new();
    let mut add = |a: NodeId, b: NodeId| {
        if seen.insert((a.min(b), a.max(b))) {
            edges.push((a, b));
        }
    };
    for v in 0..n {
        let c = labels[v];
        let same: Vec<NodeId> = (0..n).filter(|&u| u != v && labels[u] == c).collect();
        let other: Vec<NodeId> = (0..n).filter(|&u| labels[u] != c).collect();
        for &u in same.choose_multiple(&mut rng, spec.intra_edges) {
            add(v, u);
        }
        for _ in 0..spec.inter_edges {
            if rng.random_bool(0.5) {
                add(v, *other.choose(&mut rng).expect("other classes exist"));
            }
        }
    }

    TextAttributedGraph::from_parts(GraphParts {
        name: "synthetic".into(),
        texts,
        features,
        edges,
        labels,
        splits: Splits::random(n, spec.seed),
        class_names: TOPICS.iter().map(|(name, _)| name.to_string()).collect(),
    })
    .expect("generated graph is valid")
}

/// Two `size`-cliques bridged by a single edge between their first nodes.
/// Features are one-hot by clique; labels follow the clique.
pub fn two_clique_graph(size: usize) -> TextAttributedGraph {
    let n = 2 * size;
    let labels: Vec<usize> = (0..n).map(|v| v / size).collect();
    let mut edges = Vec::new();
    for c in 0..2 {
        let base = c * size;
        for a in 0..size {
            for b in a + 1..size {
                edges.push((base + a, base + b));
            }
        }
    }
    edges.push((0, size));
    let features = Array2::from_shape_fn((n, 2), |(v, j)| if labels[v] == j { 1.0 } else { 0.0 });
    let texts = labels
        .iter()
        .map(|&c| TOPICS[c].1[..4].join(" "))
        .collect();
    let all: Vec<NodeId> = (0..n).collect();
    TextAttributedGraph::from_parts(GraphParts {
        name: "two-clique".into(),
        texts,
        features,
        edges,
        labels,
        // evaluation falls back to every node when the test split is empty
        splits: Splits {
            train: all,
            val: Vec::new(),
            test: Vec::new(),
        },
        class_names: vec![TOPICS[0].0.into(), TOPICS[1].0.into()],
    })
    .expect("generated graph is valid")
}

/// A connected random graph: a random spanning tree plus each remaining
/// pair with probability `extra_edge_prob`. Features are standard normal,
/// labels uniform, and every node is in the training split.
pub fn random_connected_graph(
    n: usize,
    feature_dim: usize,
    classes: usize,
    extra_edge_prob: f64,
    seed: u64,
) -> TextAttributedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for a in 0..n {
        for b in a + 1..n {
            // draw for every pair so the stream does not depend on the tree
            if rng.random_bool(extra_edge_prob) && !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
        }
    }
    let features = Array2::from_shape_fn((n, feature_dim), |_| {
        rand_distr::StandardNormal.sample(&mut rng)
    });
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let texts = (0..n)
        .map(|_| FILLER.choose_multiple(&mut rng, 3).copied().collect::<Vec<_>>().join(" "))
        .collect();
    TextAttributedGraph::from_parts(GraphParts {
        name: format!("random-{n}"),
        texts,
        features,
        edges,
        labels,
        splits: Splits {
            train: (0..n).collect(),
            val: Vec::new(),
            test: Vec::new(),
        },
        class_names: (0..classes).map(|c| format!("class {c}")).collect(),
    })
    .expect("generated graph is valid")
}

/// A `rows x cols` matrix of independent standard normal draws.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rand_distr::StandardNormal.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homophilous_graph_is_mostly_homophilous() {
        let g = homophilous_graph(&HomophilousSpec::default());
        assert_eq!(g.num_nodes(), 60);
        let same = g
            .edges()
            .iter()
            .filter(|&&(a, b)| g.label(a) == g.label(b))
            .count();
        let h = same as f64 / g.num_edges() as f64;
        assert!((0.6..0.75).contains(&h), "edge homophily {h}");
        assert_eq!(g, homophilous_graph(&HomophilousSpec::default()));
    }

    #[test]
    fn two_cliques_have_one_bridge() {
        let g = two_clique_graph(4);
        assert_eq!(g.num_edges(), 2 * 6 + 1);
        assert_eq!(g.degree(0), 4);
        assert_eq!(g.degree(1), 3);
    }
}
