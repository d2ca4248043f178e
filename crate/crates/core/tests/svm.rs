mod common;

use common::*;
use ctxkernel::svm::{
    dual_objective, hinge_loss, loss_gradient_wrt_maps, primal_from_dual, primal_objective, train_dual,
    train_ensemble, EnsembleModel, Maps, SvmConfig, SvmModel,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn random_problem(seed: u64, n: usize, d: usize) -> (Array2<f64>, Array1<f64>) {
    let mut rng = rng(seed);
    let x = uniform(&mut rng, n, d, -1.0, 1.0);
    let mut y = Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    y[0] = 1.0;
    y[1] = -1.0;
    (x, y)
}

/// Projected gradient ascent on the box-constrained dual, run long enough
/// to serve as a reference optimum.
fn reference_dual(x: &Array2<f64>, y: &Array1<f64>, cost: f64) -> f64 {
    let n = x.nrows();
    let q = Array2::from_shape_fn((n, n), |(i, j)| y[i] * y[j] * x.row(i).dot(&x.row(j)));
    let lipschitz = q.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lipschitz.max(1e-12);
    let mut a = Array1::<f64>::zeros(n);
    for _ in 0..200_000 {
        let grad = 1.0 - q.dot(&a);
        a.scaled_add(step, &grad);
        a.mapv_inplace(|v| v.clamp(0.0, cost));
    }
    a.sum() - 0.5 * a.dot(&q.dot(&a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solutions_are_feasible_converged_and_consistent(seed in any::<u64>(), n in 3usize..40, d in 1usize..8, cost in 0.05f64..20.0) {
        let (x, y) = random_problem(seed, n, d);
        let sol = train_dual(x.view(), y.view(), cost, &SvmConfig::default(), None).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.alpha.iter().all(|&a| (0.0..=cost).contains(&a)));
        let w = primal_from_dual(sol.alpha.view(), y.view(), x.view()).unwrap();
        prop_assert_eq!(&w, &sol.w);
        let primal = primal_objective(sol.w.view(), y.view(), x.view(), cost);
        let dual = dual_objective(sol.alpha.view(), sol.w.view());
        prop_assert!(primal - dual <= 1e-9 * primal.abs().max(1.0) + 1e-12, "gap {}", primal - dual);
        prop_assert!(primal - dual >= -1e-9 * primal.abs().max(1.0));
    }

    /// Scaling maps by `s` and the cost by `1/s²` scales `w` by `1/s`.
    #[test]
    fn scaling_homogeneity(seed in any::<u64>(), n in 4usize..30, d in 1usize..6, s in 0.2f64..5.0) {
        let (x, y) = random_problem(seed, n, d);
        let cost = 1.0;
        let base = train_dual(x.view(), y.view(), cost, &SvmConfig::default(), None).unwrap();
        let scaled_x = &x * s;
        let scaled = train_dual(scaled_x.view(), y.view(), cost / (s * s), &SvmConfig::default(), None).unwrap();
        let expected = &base.w / s;
        let norm = expected.dot(&expected).sqrt().max(1e-12);
        let diff = &scaled.w - &expected;
        prop_assert!(diff.dot(&diff).sqrt() <= 1e-5 * norm, "rel diff {}", diff.dot(&diff).sqrt() / norm);
        let margin = |w: &Array1<f64>, xs: &Array2<f64>| xs.dot(w);
        for (a, b) in margin(&base.w, &x).iter().zip(margin(&scaled.w, &scaled_x).iter()) {
            if a.abs() > 1e-6 {
                prop_assert_eq!(a.signum(), b.signum());
            }
        }
    }

    /// Separable toys: points pushed at least 1 away from a random line
    /// through the origin, with a large cost.
    #[test]
    fn separable_sets_reach_zero_hinge(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = rng(seed);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let normal = ndarray::array![angle.cos(), angle.sin()];
        let tangent = ndarray::array![-angle.sin(), angle.cos()];
        let mut x = Array2::zeros((n, 2));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            let p = &normal * (label * rng.random_range(1.0..3.0)) + &tangent * rng.random_range(-3.0..3.0);
            x.row_mut(i).assign(&p);
            y[i] = label;
        }
        let cost = 1e4;
        let sol = train_dual(x.view(), y.view(), cost, &SvmConfig::default(), None).unwrap();
        let hinge: f64 = x.rows().into_iter().zip(&y).map(|(r, &l)| (1.0 - l * sol.w.dot(&r)).max(0.0)).sum();
        prop_assert!(hinge <= 1e-6, "hinge {hinge}");
        for (r, &l) in x.rows().into_iter().zip(&y) {
            prop_assert!(l * sol.w.dot(&r) >= 1.0 - 1e-6);
        }
    }
}

#[test]
fn matches_projected_gradient_reference() {
    for seed in 0..8 {
        let (x, y) = random_problem(seed, 8, 3);
        let cost = [0.1, 1.0, 5.0][seed as usize % 3];
        let sol = train_dual(x.view(), y.view(), cost, &SvmConfig::default(), None).unwrap();
        let ours = dual_objective(sol.alpha.view(), sol.w.view());
        let reference = reference_dual(&x, &y, cost);
        assert!(ours >= reference - 1e-6 * reference.abs().max(1.0), "{ours} vs {reference}");
        assert!((ours - reference).abs() <= 1e-6 * reference.abs().max(1.0), "{ours} vs {reference}");
    }
}

/// Central differences of the hinge objective w.r.t. each pooled map,
/// with margins kept away from the kink.
#[test]
fn map_gradient_matches_finite_differences() {
    let mut rng = rng(21);
    let mut checked = 0;
    while checked < 20 {
        let (n, d, k) = (rng.random_range(3..10), rng.random_range(1..6), rng.random_range(1..4));
        let maps = uniform(&mut rng, n, d, -1.0, 1.0);
        let labels = Array2::from_shape_fn((n, k), |_| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let weights = uniform(&mut rng, k, d, -2.0, 2.0);
        let scores = maps.dot(&weights.t());
        if ndarray::Zip::from(&scores).and(&labels).fold(f64::INFINITY, |m, s, y| m.min((1.0 - s * y).abs())) < 1e-3 {
            continue;
        }
        let costs: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
        let model = SvmModel { weights, duals: None, costs, max_iter: 1, tol: 1e-9 };
        let shared = Maps::Shared(maps.clone());
        let grad = loss_gradient_wrt_maps(&model, &shared, &labels).unwrap();
        let h = 1e-6;
        for p in 0..n {
            for j in 0..d {
                let mut plus = maps.clone();
                plus[[p, j]] += h;
                let mut minus = maps.clone();
                minus[[p, j]] -= h;
                let fd = (hinge_loss(&model, &Maps::Shared(plus), &labels).unwrap()
                    - hinge_loss(&model, &Maps::Shared(minus), &labels).unwrap())
                    / (2.0 * h);
                let a = grad.concept(0)[[p, j]];
                assert!((a - fd).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {fd}");
            }
        }
        checked += 1;
    }
}

#[test]
fn stored_duals_reproduce_weights() {
    let mut rng = rng(22);
    let maps = Maps::Shared(uniform(&mut rng, 25, 4, -1.0, 1.0));
    let labels = Array2::from_shape_fn((25, 3), |(p, k)| if (p + k) % 3 == 0 { 1.0 } else { -1.0 });
    let cfg = SvmConfig { concept_costs: Some(vec![0.5, 1.0, 2.0]), ..SvmConfig::default() };
    let model = SvmModel::train(&maps, &labels, &cfg, None).unwrap();
    let duals = model.duals.as_ref().unwrap();
    for k in 0..3 {
        let w = primal_from_dual(duals.row(k), labels.column(k), maps.concept(k)).unwrap();
        let diff = &w - &model.weights.row(k);
        assert!(diff.dot(&diff).sqrt() <= 1e-8 * w.dot(&w).sqrt().max(1.0));
        assert!(duals.row(k).iter().all(|&a| a >= 0.0 && a <= model.costs[k]));
    }
}

fn balanced_toy(seed: u64, n: usize) -> (Array2<f64>, Array1<f64>) {
    let mut rng = rng(seed);
    let mut x = Array2::zeros((n, 3));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        x[[i, 0]] = label * rng.random_range(0.5..1.5);
        x[[i, 1]] = rng.random_range(-1.0..1.0);
        x[[i, 2]] = rng.random_range(-1.0..1.0);
        y[i] = label;
    }
    (x, y)
}

#[test]
fn ensemble_ranks_held_out_positives_above_negatives() {
    let (x, y) = balanced_toy(23, 60);
    let cfg = SvmConfig::default();
    let ens = train_ensemble(x.view(), y.view(), 10, 3.0, 1.0, &cfg, 7, 0).unwrap();
    assert_eq!(ens.members.len(), 10);
    let (held, labels) = balanced_toy(24, 40);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (row, &l) in held.rows().into_iter().zip(&labels) {
        if l > 0.0 { pos.push(ens.score(row)) } else { neg.push(ens.score(row)) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&pos) >= mean(&neg));
}

#[test]
fn ensemble_subsets_follow_the_ratio() {
    let mut rng = rng(25);
    let n = 50;
    let x = uniform(&mut rng, n, 2, -1.0, 1.0);
    // 5 positives, 45 negatives
    let y = Array1::from_shape_fn(n, |i| if i % 10 == 0 { 1.0 } else { -1.0 });
    let ens = train_ensemble(x.view(), y.view(), 4, 3.0, 1.0, &SvmConfig::default(), 3, 0).unwrap();
    for m in &ens.members {
        assert_eq!(m.samples.len(), 5 + 15);
        assert!((0..n).step_by(10).all(|p| m.samples.contains(&p)));
        assert!(m.samples.windows(2).all(|w| w[0] < w[1]));
    }
    assert_ne!(ens.members[0].samples, ens.members[1].samples);
    // not enough negatives: truncated to all of them
    let ens = train_ensemble(x.view(), y.view(), 2, 20.0, 1.0, &SvmConfig::default(), 3, 0).unwrap();
    assert!(ens.members.iter().all(|m| m.samples.len() == n));
}

#[test]
fn ensemble_model_is_deterministic_and_averages_members() {
    let mut rng = rng(26);
    let maps = Maps::Shared(uniform(&mut rng, 40, 3, -1.0, 1.0));
    let labels = Array2::from_shape_fn((40, 2), |(p, k)| if (p + k) % 4 == 0 { 1.0 } else { -1.0 });
    let cfg = SvmConfig::default();
    let a = EnsembleModel::train(&maps, &labels, 5, 3.0, &cfg, 99).unwrap();
    let b = EnsembleModel::train(&maps, &labels, 5, 3.0, &cfg, 99).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = EnsembleModel::train(&maps, &labels, 5, 3.0, &cfg, 100).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
    let scores = a.scores(&maps).unwrap();
    for k in 0..2 {
        for p in 0..40 {
            let row = maps.concept(k).row(p).to_owned();
            let mean = a.concepts[k].members.iter().map(|m| m.w.dot(&row)).sum::<f64>() / 5.0;
            assert!((scores[[p, k]] - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        }
    }
}
