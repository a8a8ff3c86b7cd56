use approx::assert_abs_diff_eq;
use ndarray::{array, s, Array2, Axis};
use tagx_core::gcn::EmbeddingTable;
use tagx_core::projector::{
    context_loss, contrastive_loss, contrastive_loss_with, gradient_check, mean_pool_normalize,
    objective, projected_distribution, target_distribution, train_projector, ProjectorArch,
    ProjectorModel, ProjectorTrainConfig, TextEmbeddingTable,
};
use tagx_core::synthetic::gaussian_matrix;

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut r in out.outer_iter_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    out
}

/// Ten nodes whose text embeddings are their GNN embeddings zero-padded to `h`.
fn ten_nodes(m: usize, h: usize) -> (EmbeddingTable, TextEmbeddingTable) {
    let f = gaussian_matrix(10, m, 21);
    let mut padded = Array2::zeros((10, h));
    padded.slice_mut(s![.., ..m]).assign(&f);
    let emb = EmbeddingTable {
        rows: f,
        source: "toy".into(),
    };
    (emb, TextEmbeddingTable::new(unit_rows(&padded), "toy").unwrap())
}

fn train_toy(shared_temperature: bool) -> (tagx_core::projector::LossBreakdown, tagx_core::projector::LossBreakdown) {
    let (emb, texts) = ten_nodes(4, 8);
    let nodes: Vec<usize> = (0..10).collect();
    let cfg = ProjectorTrainConfig {
        batch: 10,
        shared_temperature,
        ..ProjectorTrainConfig::default()
    };
    let (_, report) = train_projector(&emb, &texts, &nodes, &cfg).unwrap();
    (report.initial, report.best)
}

fn drop_fraction(init: f64, best: f64) -> f64 {
    (init - best) / init.abs()
}

#[test]
fn both_terms_drop_by_a_third_with_a_shared_temperature() {
    let (init, best) = train_toy(true);
    assert!(drop_fraction(init.context, best.context) >= 0.3, "{init:?} -> {best:?}");
    assert!(drop_fraction(init.contrast, best.contrast) >= 0.3, "{init:?} -> {best:?}");
}

#[test]
fn untempered_contrast_term_stalls_near_its_floor() {
    // With p^Pi at temperature 1 its logits are cosines in [-1, 1], so the
    // contrast term cannot approach the entropy of the sharp tau = 0.1
    // target. On this instance its global minimum over all unit vectors is
    // about 1.427 against 1.799 at initialization, a 21% drop at most.
    let (init, best) = train_toy(false);
    assert!(drop_fraction(init.context, best.context) >= 0.3, "{init:?} -> {best:?}");
    let contrast_drop = drop_fraction(init.contrast, best.contrast);
    assert!((0.15..0.21).contains(&contrast_drop), "{init:?} -> {best:?}");
    assert!(best.contrast >= 1.42, "{best:?}");
}

#[test]
fn single_term_objectives_do_not_get_worse() {
    let (emb, texts) = ten_nodes(4, 8);
    let nodes: Vec<usize> = (0..10).collect();
    for beta in [1.0, 0.0] {
        let cfg = ProjectorTrainConfig {
            beta,
            batch: 4,
            epochs: 60,
            ..ProjectorTrainConfig::default()
        };
        let (_, r) = train_projector(&emb, &texts, &nodes, &cfg).unwrap();
        if beta == 1.0 {
            assert!(r.best.context <= r.initial.context);
        } else {
            assert!(r.best.contrast <= r.initial.contrast);
        }
        assert_eq!(r.history.len(), 60);
    }
}

#[test]
fn training_is_seed_deterministic() {
    let (emb, texts) = ten_nodes(3, 5);
    let nodes: Vec<usize> = (0..10).collect();
    let cfg = ProjectorTrainConfig {
        epochs: 20,
        batch: 3,
        ..ProjectorTrainConfig::default()
    };
    let (a, _) = train_projector(&emb, &texts, &nodes, &cfg).unwrap();
    let (b, _) = train_projector(&emb, &texts, &nodes, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gradients_match_finite_differences_for_each_mix() {
    let f = gaussian_matrix(5, 3, 4);
    let text = unit_rows(&gaussian_matrix(5, 4, 5));
    let mut mlp = ProjectorModel::new_mlp(3, 2, 4, 6);
    if let tagx_core::projector::ProjectorParams::Mlp { b1, b2, .. } = &mut mlp.params {
        b1.assign(&(gaussian_matrix(1, 6, 7).row(0).to_owned() * 0.1));
        b2.assign(&(gaussian_matrix(1, 8, 8).row(0).to_owned() * 0.1));
    }
    let lin = ProjectorModel::linear(gaussian_matrix(3, 8, 9) * 0.3, 2, 4).unwrap();
    for model in [&mlp, &lin] {
        for beta in [1.0, 0.0, 0.5] {
            let cfg = ProjectorTrainConfig {
                beta,
                tau: 0.5,
                ..ProjectorTrainConfig::default()
            };
            let err = gradient_check(model, &f, &text, &cfg, 1e-4).unwrap();
            assert!(err < 1e-4, "{:?} beta {beta}: {err:e}", model.arch());
        }
    }
}

#[test]
fn distributions_are_row_stochastic() {
    let f = gaussian_matrix(7, 3, 1);
    let z = unit_rows(&gaussian_matrix(7, 5, 2));
    for p in [target_distribution(&f, 0.1), target_distribution(&f, 3.0), projected_distribution(&z, 1.0)] {
        for r in p.outer_iter() {
            assert_abs_diff_eq!(r.sum(), 1.0, epsilon = 1e-9);
            assert!(r.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn context_loss_ignores_the_scale_of_the_pooled_vector() {
    let z = gaussian_matrix(3, 4, 11);
    let t = unit_rows(&gaussian_matrix(1, 4, 12));
    let a = mean_pool_normalize(&z).unwrap().insert_axis(Axis(0));
    let b = mean_pool_normalize(&(&z * 7.5)).unwrap().insert_axis(Axis(0));
    assert_abs_diff_eq!(context_loss(&a, &t).unwrap(), context_loss(&b, &t).unwrap(), epsilon = 1e-12);
}

#[test]
fn contrastive_loss_ignores_rotations_of_the_gnn_embeddings() {
    let f = gaussian_matrix(6, 2, 13);
    let z = unit_rows(&gaussian_matrix(6, 3, 14));
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let rot = array![[c, -s], [s, c]];
    let a = contrastive_loss(&z, &f, 0.2).unwrap();
    let b = contrastive_loss(&z, &f.dot(&rot), 0.2).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
}

#[test]
fn matching_distributions_give_the_entropy() {
    // with tau = 1 and f = z, both softmaxes coincide
    let z = unit_rows(&gaussian_matrix(4, 3, 15));
    let p = target_distribution(&z, 1.0);
    let entropy = -(&p * &p.mapv(f64::ln)).sum() / 4.0;
    assert_abs_diff_eq!(contrastive_loss(&z, &z, 1.0).unwrap(), entropy, epsilon = 1e-12);
    // and any other projection does at least as badly
    let other = unit_rows(&gaussian_matrix(4, 3, 16));
    assert!(contrastive_loss(&other, &z, 1.0).unwrap() >= entropy - 1e-12);
}

#[test]
fn sharp_temperature_approaches_the_one_hot_target() {
    let f = array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]];
    let z = unit_rows(&gaussian_matrix(3, 3, 17));
    let log_pi = projected_distribution(&z, 1.0).mapv(f64::ln);
    // every row's argmax-similarity partner is itself
    let expected = -(log_pi[[0, 0]] + log_pi[[1, 1]] + log_pi[[2, 2]]) / 3.0;
    assert_abs_diff_eq!(contrastive_loss(&z, &f, 1e-3).unwrap(), expected, epsilon = 1e-6);
}

#[test]
fn half_mix_is_the_average_of_the_terms() {
    let f = gaussian_matrix(5, 3, 18);
    let text = unit_rows(&gaussian_matrix(5, 4, 19));
    let model = ProjectorModel::linear(gaussian_matrix(3, 8, 20), 2, 4).unwrap();
    let cfg = ProjectorTrainConfig::default();
    let loss = objective(&model, &f, &text, &cfg).unwrap().loss;
    assert_eq!(loss.total, 0.5 * loss.context + 0.5 * loss.contrast);
    let zbar = Array2::from_shape_fn((5, 4), |(i, j)| {
        mean_pool_normalize(&model.project(f.row(i)).unwrap()).unwrap()[j]
    });
    assert_abs_diff_eq!(loss.context, context_loss(&zbar, &text).unwrap(), epsilon = 1e-12);
    assert_abs_diff_eq!(loss.contrast, contrastive_loss_with(&zbar, &f, cfg.tau, 1.0).unwrap(), epsilon = 1e-12);
}

#[test]
fn checkpoint_file_round_trip() {
    let (emb, texts) = ten_nodes(3, 5);
    let nodes: Vec<usize> = (0..10).collect();
    for arch in [ProjectorArch::Mlp, ProjectorArch::Linear] {
        let cfg = ProjectorTrainConfig {
            arch,
            epochs: 5,
            ..ProjectorTrainConfig::default()
        };
        let (model, _) = train_projector(&emb, &texts, &nodes, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.proj.json");
        model.save(&path, &cfg).unwrap();
        let (back, ckpt) = ProjectorModel::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!((ckpt.m, ckpt.k, ckpt.h, ckpt.arch), (3, 4, 5, arch));
        assert_eq!((ckpt.beta, ckpt.tau, ckpt.seed), (0.5, 0.1, 0));
        for v in 0..10 {
            assert_eq!(back.project(emb.row(v)).unwrap(), model.project(emb.row(v)).unwrap());
        }
    }
}
