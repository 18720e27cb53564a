mod common;

use govprobe::probes::forest::{ForestParams, Node, RandomForest};
use govprobe::probes::logreg::{self, LogRegParams};
use govprobe::probes::metrics::{mean_std, permutation_test};
use govprobe::probes::{micro_average, rank_heads, Metrics, ProbeConfig, ProbeKind, TrainedProbe};
use govprobe::rng::SeededRng;
use govprobe::Execution;
use ndarray::Array2;
use proptest::prelude::*;

use common::{brute_force_splits, mlp_gradient_error};

fn blobs(rng: &mut SeededRng, n: usize, d: usize, gap: f64) -> (Array2<f64>, Vec<bool>) {
    let x = Array2::from_shape_fn((n, d), |(i, _)| {
        let c = if i % 2 == 0 { gap } else { -gap };
        c + rng.uniform(-1.0, 1.0)
    });
    let y = (0..n).map(|i| i % 2 == 0).collect();
    (x, y)
}

fn heads(d: usize) -> Vec<(u16, u16)> {
    (0..d).map(|k| ((k / 12) as u16, (k % 12) as u16)).collect()
}

#[test]
fn logreg_optimum_is_stationary() {
    let mut rng = SeededRng::new(3);
    let (x, y) = blobs(&mut rng, 200, 3, 0.5);
    let params = LogRegParams::default();
    let m = logreg::fit(x.view(), &y, &params);
    assert!(m.converged);
    let mut theta = m.coef.clone();
    theta.push(m.intercept);
    // central differences of the objective value only
    let h = 1e-5;
    for k in 0..theta.len() {
        let mut p = theta.clone();
        p[k] += h;
        let mut q = theta.clone();
        q[k] -= h;
        let g = (logreg::objective(&p, x.view(), &y, params.c).0 - logreg::objective(&q, x.view(), &y, params.c).0)
            / (2.0 * h);
        assert!(g.abs() < 1e-3, "coordinate {k}: {g}");
    }
}

#[test]
fn logreg_separates_blobs() {
    let mut rng = SeededRng::new(4);
    let (x, y) = blobs(&mut rng, 300, 4, 3.0);
    let m = logreg::fit(x.view(), &y, &LogRegParams::default());
    let pred: Vec<bool> = m.predict_proba(x.view()).iter().map(|&p| p >= 0.5).collect();
    assert_eq!(Metrics::from_predictions(&y, &pred).unwrap().accuracy, 1.0);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = SeededRng::new(5);
    for _ in 0..100 {
        let err = mlp_gradient_error(&mut rng);
        assert!(err <= 1e-4, "{err:e}");
    }
}

proptest! {
    #[test]
    fn forest_root_split_is_gini_optimal(seed in any::<u64>(), m in 4usize..30) {
        let mut rng = SeededRng::new(seed);
        let x = Array2::from_shape_fn((m, 3), |_| rng.index(6) as f64 * 0.25);
        let mut y: Vec<bool> = (0..m).map(|_| rng.index(2) == 1).collect();
        y[0] = true;
        y[1] = false;
        let candidates = brute_force_splits(&x, &y);
        prop_assume!(!candidates.is_empty());
        let best = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        let params = ForestParams { n_trees: 1, max_features: Some(3), bootstrap: false, seed };
        let forest = RandomForest::fit(Execution::Sequential, x.view(), &y, &params);
        let Node::Split { feature, threshold, .. } = forest.trees[0].nodes[0] else {
            panic!("root is a leaf");
        };
        prop_assert!(candidates.iter().any(|&(f, t, g)| f == feature && t == threshold && (g - best).abs() < 1e-12));
    }

    #[test]
    fn micro_average_pools_counts(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let runs: Vec<Metrics> = (0..1 + rng.index(6))
            .map(|_| Metrics::from_counts(rng.index(20), rng.index(20), rng.index(20), rng.index(20)))
            .collect();
        let m = micro_average(&runs);
        prop_assert_eq!(m.tp, runs.iter().map(|r| r.tp).sum::<usize>());
        prop_assert_eq!(m.fn_, runs.iter().map(|r| r.fn_).sum::<usize>());
        prop_assert_eq!(m, Metrics::from_counts(m.tp, m.fp, m.fn_, m.tn));
    }

    #[test]
    fn permutation_p_value_is_a_probability(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a: Vec<f64> = (0..1 + rng.index(8)).map(|_| rng.unit()).collect();
        let b: Vec<f64> = (0..1 + rng.index(8)).map(|_| rng.unit()).collect();
        let p = permutation_test(&a, &b, 99, seed).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert_eq!(p, permutation_test(&a, &b, 99, seed).unwrap());
    }
}

#[test]
fn sample_standard_deviation() {
    let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    assert_eq!(m, 5.0);
    assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
}

#[test]
fn head_ranking_breaks_ties_by_position() {
    let ranked = rank_heads(&[(1, 0), (0, 3), (0, 1), (2, 2)], &[0.5, -0.5, 0.1, -0.9]);
    let order: Vec<(u16, u16)> = ranked.iter().map(|r| r.0).collect();
    assert_eq!(order, vec![(2, 2), (0, 3), (1, 0), (0, 1)]);
}

#[test]
fn saved_probes_predict_identically() {
    let mut rng = SeededRng::new(8);
    let (x, y) = blobs(&mut rng, 120, 6, 1.0);
    let dir = tempfile::tempdir().unwrap();
    for kind in ProbeKind::ALL {
        let mut cfg = ProbeConfig::new(kind, 1);
        cfg.trees = 20;
        cfg.standardize = kind == ProbeKind::Mlp1;
        let probe = TrainedProbe::fit(&cfg, x.view(), &y, heads(6), Execution::Sequential).unwrap();
        let path = dir.path().join(format!("{kind}.json"));
        probe.save(&path).unwrap();
        let loaded = TrainedProbe::load(&path).unwrap();
        assert_eq!(loaded, probe);
        assert_eq!(loaded.predict_scores(x.view()).unwrap(), probe.predict_scores(x.view()).unwrap());
        assert!(probe.evaluate(x.view(), &y).unwrap().accuracy > 0.9, "{kind}");
        assert_eq!(probe.head_ranking().is_ok(), kind == ProbeKind::LogReg);
        assert!(probe.predict(Array2::zeros((1, 5)).view()).is_err());
    }
}

#[test]
fn training_is_seed_deterministic() {
    let mut rng = SeededRng::new(9);
    let (x, y) = blobs(&mut rng, 80, 4, 0.3);
    for kind in ProbeKind::ALL {
        let mut cfg = ProbeConfig::new(kind, 42);
        cfg.trees = 10;
        let a = TrainedProbe::fit(&cfg, x.view(), &y, heads(4), Execution::Sequential).unwrap();
        let b = TrainedProbe::fit(&cfg, x.view(), &y, heads(4), Execution::Parallel).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let x = Array2::from_elem((4, 2), f64::NAN);
    let y = [true, false, true, false];
    let cfg = ProbeConfig::new(ProbeKind::LogReg, 0);
    assert!(TrainedProbe::fit(&cfg, x.view(), &y, heads(2), Execution::Sequential).is_err());
    let x = Array2::zeros((4, 2));
    assert!(TrainedProbe::fit(&cfg, x.view(), &y, heads(3), Execution::Sequential).is_err());
    let mut rf = ProbeConfig::new(ProbeKind::Rf, 0);
    rf.trees = 0;
    assert!(TrainedProbe::fit(&rf, x.view(), &y, heads(2), Execution::Sequential).is_err());
}
