mod common;

use common::*;
use ctxkernel::metrics::{corel_metrics, evaluate, map_score, mf_scores, MetricReport, Protocol};
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Integer-valued scores (plenty of ties) and truth with a positive per
/// concept.
fn instance(seed: u64, n: usize, k: usize) -> (Array2<f64>, Array2<f64>) {
    let mut rng = rng(seed);
    let scores = Array2::from_shape_fn((n, k), |_| rng.random_range(-10..10) as f64);
    let mut truth = Array2::from_shape_fn((n, k), |_| if rng.random_bool(0.4) { 1.0 } else { -1.0 });
    for c in 0..k {
        truth[[c % n, c]] = 1.0;
    }
    (scores, truth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_metrics_ignore_increasing_transforms(seed in any::<u64>(), n in 1usize..20, k in 1usize..6, top in 1usize..4) {
        let (scores, truth) = instance(seed, n, k);
        for f in [|x: f64| 2.0 * x + 5.0, |x: f64| x * x * x, |x: f64| x.exp()] {
            let t = scores.mapv(f);
            prop_assert_eq!(map_score(&scores, &truth).unwrap(), map_score(&t, &truth).unwrap());
            prop_assert_eq!(corel_metrics(&scores, &truth, top, true).unwrap(), corel_metrics(&t, &truth, top, true).unwrap());
        }
    }

    #[test]
    fn sample_order_does_not_matter(seed in any::<u64>(), n in 1usize..20, k in 1usize..6) {
        let (_, truth) = instance(seed, n, k);
        let mut rng = rng(seed ^ 1);
        // distinct scores, so ties cannot depend on the order
        let scores = uniform(&mut rng, n, k, -1.0, 1.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let ps = scores.select(Axis(0), &order);
        let pt = truth.select(Axis(0), &order);
        prop_assert!(close(map_score(&scores, &truth).unwrap(), map_score(&ps, &pt).unwrap()));
        let (s1, c1) = mf_scores(&scores, &truth, 0.0).unwrap();
        let (s2, c2) = mf_scores(&ps, &pt, 0.0).unwrap();
        prop_assert!(close(s1, s2) && close(c1, c2));
    }

    #[test]
    fn rates_are_bounded(seed in any::<u64>(), n in 1usize..20, k in 1usize..6, top in 1usize..6, skip in any::<bool>()) {
        let (scores, truth) = instance(seed, n, k);
        let (s, c) = mf_scores(&scores, &truth, 0.0).unwrap();
        let m = map_score(&scores, &truth).unwrap();
        for v in [s, c, m] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        let r = corel_metrics(&scores, &truth, top, skip).unwrap();
        for v in [r.recall, r.precision, r.f] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
        }
        prop_assert!(r.n_plus <= k);
        prop_assert!(r.f <= r.recall.max(r.precision) + 1e-9);
        prop_assert!(r.f >= r.recall.min(r.precision) - 1e-9);
    }
}

#[test]
fn hand_computed_f_scores() {
    let truth = array![[1., -1.], [1., 1.], [-1., 1.]];
    let scores = array![[1., -1.], [1., -1.], [-1., 1.]];
    let (s, c) = mf_scores(&scores, &truth, 0.0).unwrap();
    assert!(close(s, 100.0 * (1.0 + 2.0 / 3.0 + 1.0) / 3.0));
    assert!(close(c, 100.0 * (1.0 + 2.0 / 3.0) / 2.0));
    assert_eq!(mf_scores(&truth, &truth, 0.0).unwrap(), (100.0, 100.0));
    assert_eq!(mf_scores(&(-&truth.mapv(f64::abs)), &truth, 0.0).unwrap().0, 0.0);
}

#[test]
fn hand_computed_average_precision() {
    let truth = array![[1.], [-1.], [1.], [-1.]];
    let scores = array![[4.], [3.], [2.], [1.]];
    assert!(close(map_score(&scores, &truth).unwrap(), 100.0 * (1.0 + 2.0 / 3.0) / 2.0));
    let perfect = array![[1., -1.], [1., 1.], [-1., -1.]];
    assert_eq!(map_score(&perfect, &perfect).unwrap(), 100.0);
}

#[test]
fn hand_computed_corel_counts() {
    // top-1: sample 0 -> keyword 0 (correct), sample 1 -> keyword 2 (wrong)
    let scores = array![[0.9, 0.5, 0.1], [0.2, 0.3, 0.8]];
    let truth = array![[1., 1., -1.], [-1., 1., -1.]];
    let r = corel_metrics(&scores, &truth, 1, true).unwrap();
    // keyword 2 never true: excluded
    assert_eq!(r.keywords, 2);
    // recall (1/1, 0/2), precision (1/1, 0 never assigned)
    assert!(close(r.recall, 50.0));
    assert!(close(r.precision, 50.0));
    assert!(close(r.f, 50.0));
    assert_eq!(r.n_plus, 1);
    let all = corel_metrics(&scores, &truth, 1, false).unwrap();
    assert_eq!(all.keywords, 3);
    assert!(close(all.recall, 100.0 / 3.0));
    assert!(close(all.precision, 100.0 / 3.0));
}

#[test]
fn full_annotation_is_perfect() {
    let truth = Array2::from_elem((4, 3), 1.0);
    let scores = uniform(&mut rng(31), 4, 3, -1.0, 1.0);
    let r = corel_metrics(&scores, &truth, 3, true).unwrap();
    assert_eq!((r.recall, r.precision, r.n_plus), (100.0, 100.0, 3));
}

#[test]
fn protocol_reports() {
    let (scores, truth) = instance(32, 8, 3);
    match evaluate(Protocol::ImageClef, &scores, &truth, 5).unwrap() {
        MetricReport::ImageClef { mf_s, mf_c, map } => {
            assert_eq!((mf_s, mf_c), mf_scores(&scores, &truth, 0.0).unwrap());
            assert_eq!(map, map_score(&scores, &truth).unwrap());
        }
        other => panic!("{other:?}"),
    }
    let report = evaluate(Protocol::Corel, &scores, &truth, 2).unwrap();
    let table = report.to_table();
    for key in ["R", "P", "F", "N+"] {
        assert!(table.lines().any(|l| l.split_whitespace().next() == Some(key)), "{table}");
    }
    let kv = report.to_kv();
    for key in ["recall", "precision", "f", "n_plus"] {
        assert!(kv.lines().any(|l| l.starts_with(&format!("{key}="))), "{kv}");
    }
}
