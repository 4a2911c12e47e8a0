mod common;

use camero::consistency::{
    ensemble_consistency_value, pairwise_consistency_value, symmetric_kl, Metric,
};
use camero::data::split_indices;
use camero::ensemble::predict;
use camero::metrics::{prediction_similarity, seed_variance};
use camero::model::{Activation, EnsembleModel, ModelSpec, Task};
use camero::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn matrix(rows: usize, cols: usize, lim: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-lim..lim, rows * cols).prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_rows_lie_on_the_simplex(t in matrix(4, 5, 30.0)) {
        let s = t.softmax(1).unwrap();
        for r in 0..4 {
            let row = s.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_kl_is_nonnegative_and_symmetric(p in simplex(4), q in simplex(4)) {
        let a = symmetric_kl(&p, &q).unwrap();
        let b = symmetric_kl(&q, &p).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-15 * a.max(1.0));
        prop_assert_eq!(symmetric_kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn regularizers_are_nonnegative_and_vanish_on_identical_branches(
        a in matrix(3, 4, 5.0), b in matrix(3, 4, 5.0), c in matrix(3, 4, 5.0)
    ) {
        let w = [1.0 / 3.0; 3];
        for metric in [Metric::SymmetricKl, Metric::SquaredEuclidean] {
            let ls = [a.clone(), b.clone(), c.clone()];
            prop_assert!(ensemble_consistency_value(&ls, &w, metric).unwrap() >= 0.0);
            prop_assert!(pairwise_consistency_value(&ls, metric).unwrap() >= 0.0);
            let same = [a.clone(), a.clone(), a.clone()];
            prop_assert!(ensemble_consistency_value(&same, &w, metric).unwrap().abs() <= 1e-9);
            prop_assert!(pairwise_consistency_value(&same, metric).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn pairwise_is_four_times_ensemble_for_two_branches(a in matrix(5, 3, 4.0), b in matrix(5, 3, 4.0)) {
        let ls = [a, b];
        let e = ensemble_consistency_value(&ls, &[0.5, 0.5], Metric::SquaredEuclidean).unwrap();
        let p = pairwise_consistency_value(&ls, Metric::SquaredEuclidean).unwrap();
        prop_assert!((p - 4.0 * e).abs() <= 1e-10 * p.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn similarity_is_symmetric_with_unit_diagonal(
        labels in prop::collection::vec(prop::collection::vec(0usize..3, 12), 2..5)
    ) {
        let s = prediction_similarity(&labels).unwrap();
        for i in 0..s.size() {
            prop_assert_eq!(s.get(i, i), 1.0);
            for j in 0..s.size() {
                prop_assert_eq!(s.get(i, j), s.get(j, i));
                prop_assert!((0.0..=1.0).contains(&s.get(i, j)));
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover_every_row(n in 3usize..300, seed in any::<u64>(), a in 0.0f64..0.4, b in 0.0f64..0.4) {
        let s = split_indices(n, [1.0 - a - b, a, b], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.dev.len(), (a * n as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(s.test.len(), (b * n as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn shifting_every_logit_keeps_predicted_labels(shift in -50.0f64..50.0, seed in 0u64..50) {
        let model = small_model(3, 1, seed);
        let x = common::rand_tensor(&mut camero::rng::substream(seed, &[1]), &[6, 3], -2.0, 2.0);
        let pred = predict(&model, &x).unwrap();
        let shifted: Vec<Tensor> = pred.branch_logits.iter().map(|t| t.map(|v| v + shift)).collect();
        let labels: Vec<Vec<usize>> = shifted.iter().map(Tensor::argmax_rows).collect();
        prop_assert_eq!(labels, pred.branch_labels());
        let ens = camero::consistency::ensemble_distribution(&shifted, &[1.0 / 3.0; 3]).unwrap();
        prop_assert_eq!(ens.argmax_rows(), pred.labels.clone().unwrap());
    }
}

fn small_model(m: usize, share: usize, seed: u64) -> EnsembleModel {
    EnsembleModel::build(
        ModelSpec {
            layer_dims: vec![3, 8, 8, 4],
            activation: Activation::Relu,
            share_depth: share,
            num_branches: m,
            task: Task::Classification,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn seed_variance_ignores_report_order() {
    use camero::data::gen_gaussian_mixture;
    use camero::train::{run_training, TrainConfig};
    let data = gen_gaussian_mixture(60, 2, 2, 0.5, 1).unwrap();
    let spec = ModelSpec {
        layer_dims: vec![2, 4, 2],
        activation: Activation::Relu,
        share_depth: 1,
        num_branches: 2,
        task: Task::Classification,
    };
    let reports: Vec<_> = (0..5)
        .map(|seed| {
            let cfg = TrainConfig { seed, epochs: 2, ..TrainConfig::default() };
            run_training(&cfg, &spec, &data).unwrap()
        })
        .collect();
    let base = seed_variance(&reports).unwrap();
    assert!(base.std.unwrap() >= 0.0);
    assert_eq!(base.count(), 5);
    let mut rev = reports.clone();
    rev.reverse();
    assert_eq!(seed_variance(&rev).unwrap(), base);
    rev.rotate_left(2);
    assert_eq!(seed_variance(&rev).unwrap(), base);
}

#[test]
fn using_a_value_twice_adds_both_path_gradients() {
    // y = x * x through one node vs. x * c with c a separate copy of x
    let x0 = Tensor::from_rows(&[vec![0.5, -1.5, 2.0]]).unwrap();
    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let y = g.mul(x, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let twice = g.grad(x).unwrap().clone();

    let mut g = Graph::new();
    let a = g.param(x0.clone());
    let b = g.param(x0.clone());
    let y = g.mul(a, b).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let split = g.grad(a).unwrap().zip_map(g.grad(b).unwrap(), |p, q| p + q);
    assert_eq!(twice, split);
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(&[vec![0.0, 1.0, -1.0]]).unwrap());
    let y = g.relu(x);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn parameter_count_follows_sharing() {
    let single = small_model(1, 0, 0).spec().param_count();
    let heads = small_model(1, 2, 0).spec().head_param_count();
    assert_eq!(small_model(4, 2, 0).spec().param_count(), single + 3 * heads);
    assert_eq!(small_model(4, 0, 0).spec().param_count(), 4 * single);
}
