//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::time::Instant;

use common::*;
use ctxkernel::context::{gram_iterates, gram_recursion, max_gamma, relative_error_trace, ContextParams, Sharing, Variant};
use ctxkernel::dataset::Split;
use ctxkernel::featmap::{InitMapConfig, InitMapKind};
use ctxkernel::metrics::{corel_metrics, map_score, mf_scores};
use ctxkernel::svm::{primal_from_dual, train_dual, Maps, SvmConfig, SvmModel};
use ctxkernel::synthetic::{arrangement_dataset, ArrangementTask};
use ctxkernel::trainer::{
    alternate, context_gradient, gradcheck, pooled_maps, train_classwise, train_from, Checkpoint, TrainConfig,
    TrainState, TrainingSet,
};
use ndarray::{array, Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    let instances = 120;
    for _ in 0..instances {
        let (w, h) = random_grid(&mut rng, 12);
        let support = hood(w, h, rng.random_range(1..=3));
        let d0 = rng.random_range(1..=8);
        let depth = rng.random_range(1..=4);
        let phi0 = uniform(&mut rng, d0, w * h, -1.0, 1.0);
        let s = phi0.t().dot(&phi0);
        let stack = random_stack(&mut rng, &support, depth);
        let bound = max_gamma(&s, stack.layer(0)).unwrap();
        let gamma = if bound.is_finite() { 0.9 * bound } else { 0.9 };
        let params = ContextParams::from_stacks(support, Sharing::Layerwise, false, gamma, vec![stack.clone()]).unwrap();
        let pass = params.forward(&phi0, 0).unwrap();
        let via_maps = pass.layers.gram(depth);
        let closed = gram_recursion(&s, &stack, gamma).unwrap();
        for (a, b) in via_maps.iter().zip(&closed) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 5.0,
        format!("{instances} instances, max rel diff {worst:.2e} (limit 1e-10), {secs:.2}s (limit 5s)"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(2);
    let instances = 60;
    let mut monotone = 0;
    let mut decayed = 0;
    let mut ratios = Vec::new();
    for _ in 0..instances {
        let (w, h) = random_grid(&mut rng, 12);
        let support = hood(w, h, 1);
        let d0 = rng.random_range(1..=8);
        let phi0 = uniform(&mut rng, d0, w * h, 0.0, 1.0);
        let s = phi0.t().dot(&phi0);
        let normalized = support.normalized_context();
        let bound = max_gamma(&s, &normalized).unwrap();
        let gamma = if bound.is_finite() { 0.9 * bound } else { 0.9 };
        let params = ContextParams::normalized(support, 6, Sharing::Stationary, gamma).unwrap();
        let iterates = gram_iterates(&s, params.stack(0), gamma).unwrap();
        // re[t - 1] is RE between K^(t) and K^(t-1)
        let re = relative_error_trace(&iterates).unwrap();
        if (1..5).all(|i| re[i] < re[i - 1]) {
            monotone += 1;
        }
        let ratio = re[5] / re[1];
        ratios.push(ratio);
        if ratio < 0.1 {
            decayed += 1;
        }
    }
    ratios.sort_by(f64::total_cmp);
    let secs = start.elapsed().as_secs_f64();
    let pass = monotone == instances && decayed * 10 >= instances * 9 && secs < 5.0;
    outcome(
        pass,
        format!(
            "strictly decreasing on {monotone}/{instances}; RE6 < 0.1*RE2 on {decayed}/{instances} (need 90%), median RE6/RE2 {:.3}; {secs:.2}s",
            ratios[ratios.len() / 2]
        ),
    )
}

fn gradcheck_instances(rng: &mut rand_chacha::ChaCha8Rng, variant: Variant, count: usize) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut worst_gap = f64::INFINITY;
    for _ in 0..count {
        let (w, h) = random_grid(rng, 9);
        let support = hood(w, h, rng.random_range(1..=2));
        let d0 = rng.random_range(1..=6);
        let depth = rng.random_range(1..=3);
        let k = 2;
        let data = random_training_set(rng, support.grid(), d0, 6, k);
        let (sharing, classes) = match variant {
            Variant::Layerwise => (Sharing::Layerwise, None),
            Variant::Stationary => (Sharing::Stationary, None),
            Variant::Classwise => (Sharing::Layerwise, Some(k)),
        };
        let gamma = rng.random_range(0.05..0.5);
        let params = random_params(rng, &support, depth, sharing, classes, gamma);
        let (_, model) = fit(&params, &data);
        let report = gradcheck(&data, &params, &model, 1e-5).unwrap();
        worst = worst.max(report.max_rel_error);
        worst_gap = worst_gap.min(report.kink_gap);
    }
    (worst, worst_gap)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(3);
    let mut parts = Vec::new();
    let mut pass = true;
    for variant in [Variant::Layerwise, Variant::Stationary, Variant::Classwise] {
        let (err, gap) = gradcheck_instances(&mut rng, variant, 20);
        pass &= err <= 1e-5 && gap >= 0.05;
        parts.push(format!("{variant} {err:.2e} (kink gap {gap:.3})"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    outcome(pass, format!("max rel error: {}; {secs:.2}s", parts.join(", ")))
}

struct Task {
    train: TrainingSet,
    test: TrainingSet,
}

fn task() -> Task {
    let dataset = arrangement_dataset(&ArrangementTask::default()).unwrap();
    let init = InitMapConfig::new(InitMapKind::Linear);
    Task {
        train: TrainingSet::from_dataset(&dataset, Split::Train, &init).unwrap(),
        test: TrainingSet::from_dataset(&dataset, Split::Test, &init).unwrap(),
    }
}

fn criterion_4(task: &Task) -> Outcome {
    let mut rng = rng(4);
    let support = hood(3, 3, 1);
    let params = random_params(&mut rng, &support, 3, Sharing::Stationary, None, 0.2);
    let layerwise = params.to_layerwise();
    let (maps, model) = fit(&params, &task.train);
    let stationary_grad = context_gradient(&params, &model, &task.train, &maps).unwrap();
    let layer_grad = context_gradient(&layerwise, &model, &task.train, &maps).unwrap();
    let summed = layer_grad.stacks[0].summed_over_layers();
    let mut diff = 0.0f64;
    for (a, b) in stationary_grad.stacks[0].layers().iter().flatten().zip(summed.layers().iter().flatten()) {
        for (x, y) in a.iter().zip(b) {
            diff = diff.max((x - y).abs());
        }
    }

    let config = TrainConfig {
        variant: Variant::Stationary,
        max_alternations: 51,
        tolerance: 0.0,
        ..TrainConfig::default()
    };
    let start = ctxkernel::trainer::initial_params(&task.train, &config).unwrap();
    let mut steps = 0;
    let mut identical = true;
    let state = train_from(&task.train, start, &config, None, &mut |_, p| {
        steps += 1;
        identical &= p.stacks().iter().all(|s| s.is_stationary());
    })
    .unwrap();
    identical &= state.params.stacks()[0].is_stationary();
    outcome(
        diff <= 1e-12 && identical && steps >= 50,
        format!("max |stationary - summed layerwise| {diff:.2e} (limit 1e-12); layers bit-identical through {steps} steps: {identical}"),
    )
}

fn accuracy(scores: &Array2<f64>, labels: &Array2<f64>) -> f64 {
    let hits = scores
        .rows()
        .into_iter()
        .zip(labels.rows())
        .filter(|(s, y)| {
            let predicted = if s[0] >= s[1] { 0 } else { 1 };
            y[predicted] > 0.0
        })
        .count();
    hits as f64 / scores.nrows() as f64
}

fn test_scores(state: &TrainState, data: &TrainingSet) -> Array2<f64> {
    let (maps, _) = pooled_maps(&state.params, &data.initial).unwrap();
    state.model.scores(&maps).unwrap()
}

fn criterion_5(task: &Task, global: &TrainState) -> Outcome {
    let warm = global.params.to_classwise(2).unwrap();
    let (cw_maps, _) = pooled_maps(&warm, &task.train.initial).unwrap();
    let (g_maps, _) = pooled_maps(&global.params, &task.train.initial).unwrap();
    let same_maps = (0..2).all(|k| cw_maps.concept(k) == g_maps.concept(0));
    let refit = SvmModel::train(&cw_maps, &task.train.labels, &SvmConfig::default(), Some(&global.model)).unwrap();
    let same_predictions = refit.scores(&cw_maps).unwrap() == global.model.scores(&g_maps).unwrap();

    let state = train_classwise(&task.train, &TrainConfig::default(), &global.params, Some(&global.model)).unwrap();
    let distance = {
        let a = state.params.stack(0);
        let b = state.params.stack(1);
        let mut sq = 0.0;
        for (x, y) in a.layers().iter().flatten().zip(b.layers().iter().flatten()) {
            sq += (x - y).mapv(|v| v * v).sum();
        }
        f64::sqrt(sq)
    };
    let acc = accuracy(&test_scores(&state, &task.test), &task.test.labels);
    outcome(
        same_maps && same_predictions && distance > 0.01,
        format!(
            "iteration-0 maps equal: {same_maps}, predictions equal: {same_predictions}; class stack distance {distance:.3e} (need > 0.01); classwise test accuracy {:.1}%",
            100.0 * acc
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = SvmConfig {
        tol: 1e-12,
        ..SvmConfig::default()
    };
    let mut rng = rng(6);
    let mut worst_gap = 0.0f64;
    let mut worst_recovery = 0.0f64;
    let mut worst_hinge = 0.0f64;
    for _ in 0..20 {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let u = array![angle.cos(), angle.sin()];
        let mut x = Array2::zeros((30, 2));
        let mut y = Array1::zeros(30);
        for i in 0..30 {
            loop {
                let p = array![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let side: f64 = p.dot(&u);
                if side.abs() >= 0.5 {
                    x.row_mut(i).assign(&p);
                    y[i] = side.signum();
                    break;
                }
            }
        }
        y[0] = 1.0;
        x.row_mut(0).assign(&(&u * 1.0));
        y[1] = -1.0;
        x.row_mut(1).assign(&(&u * -1.0));
        let cost = 1e3;
        let sol = train_dual(x.view(), y.view(), cost, &cfg, None).unwrap();
        worst_gap = worst_gap.max(sol.gap);
        let w = primal_from_dual(sol.alpha.view(), y.view(), x.view()).unwrap();
        let scale = w.dot(&w).sqrt().max(1e-300);
        worst_recovery = worst_recovery.max((&w - &sol.w).mapv(f64::abs).sum() / scale);
        let hinge: f64 = x
            .rows()
            .into_iter()
            .zip(&y)
            .map(|(p, &l)| (1.0 - l * sol.w.dot(&p)).max(0.0))
            .sum();
        worst_hinge = worst_hinge.max(hinge);
    }
    let pair_x = array![[1.0, 0.0], [-1.0, 0.0]];
    let pair_y = array![1.0, -1.0];
    let pair = train_dual(pair_x.view(), pair_y.view(), 1e6, &cfg, None).unwrap();
    let pair_err = (pair.w[0] - 1.0).abs().max(pair.w[1].abs());
    outcome(
        worst_gap <= 1e-6 && worst_recovery <= 1e-8 && worst_hinge <= 1e-6 && pair_err <= 1e-4,
        format!(
            "max gap {worst_gap:.2e}, primal recovery {worst_recovery:.2e}, hinge {worst_hinge:.2e}; symmetric pair error {pair_err:.2e}"
        ),
    )
}

fn criterion_7(task: &Task, global: &TrainState, secs: f64) -> Outcome {
    // context-free: pool the initial maps directly
    let pool = |data: &TrainingSet| {
        let d = data.initial[0].nrows();
        let mut m = Array2::zeros((data.len(), d));
        for (p, phi) in data.initial.iter().enumerate() {
            m.row_mut(p).assign(&phi.sum_axis(ndarray::Axis(1)));
        }
        Maps::Shared(m)
    };
    let free = SvmModel::train(&pool(&task.train), &task.train.labels, &SvmConfig::default(), None).unwrap();
    let free_acc = accuracy(&free.scores(&pool(&task.test)).unwrap(), &task.test.labels);
    let learned_acc = accuracy(&test_scores(global, &task.test), &task.test.labels);
    let alternations = global.history.len();
    outcome(
        free_acc <= 0.6 && learned_acc >= 0.9 && alternations <= 100 && secs < 60.0,
        format!(
            "context-free {:.1}% (limit 60%), learned layerwise {:.1}% (need 90%) after {alternations} alternations, {secs:.2}s",
            100.0 * free_acc,
            100.0 * learned_acc
        ),
    )
}

fn criterion_8(global: &TrainState) -> Outcome {
    let losses = global.losses();
    let worst_rise = losses.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let pass = losses.windows(2).all(|w| w[1] <= w[0] + 1e-6) && global.converged && losses.len() < 100;
    outcome(
        pass,
        format!(
            "{} alternations, converged: {}, largest increase {worst_rise:.2e} (tolerance 1e-6), objective {:.6} -> {:.6}",
            losses.len(),
            global.converged,
            losses[0],
            losses[losses.len() - 1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut checks = Vec::new();
    let truth = array![[1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let predicted = array![[1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
    let (mf_s, mf_c) = mf_scores(&predicted, &truth, 0.0).unwrap();
    checks.push(("MF-S", (mf_s - 800.0 / 9.0).abs() < 1e-9));
    checks.push(("MF-C", (mf_c - 250.0 / 3.0).abs() < 1e-9));
    let (p_s, p_c) = mf_scores(&truth, &truth, 0.0).unwrap();
    checks.push(("perfect MF", p_s == 100.0 && p_c == 100.0));

    let ap = map_score(&array![[4.0], [3.0], [2.0], [1.0]], &array![[1.0], [-1.0], [1.0], [-1.0]]).unwrap();
    checks.push(("AP hand case", (ap - 250.0 / 3.0).abs() < 1e-9));

    let scores = array![[0.9, 0.5, 0.1], [0.2, 0.8, 0.3]];
    let truth = array![[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0]];
    let r = corel_metrics(&scores, &truth, 1, true).unwrap();
    let two_thirds = 200.0 / 3.0;
    checks.push((
        "corel hand case",
        (r.recall - two_thirds).abs() < 1e-9
            && (r.precision - two_thirds).abs() < 1e-9
            && (r.f - two_thirds).abs() < 1e-9
            && r.n_plus == 2,
    ));

    let mut rng = rng(9);
    let m = 10;
    let trials = 10_000;
    let mut total = 0.0;
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..trials {
        order.shuffle(&mut rng);
        let s = Array2::from_shape_fn((m, 1), |(i, _)| order[i] as f64);
        let mut t = Array2::from_elem((m, 1), -1.0);
        t[[0, 0]] = 1.0;
        total += map_score(&s, &t).unwrap();
    }
    let expected = 100.0 * (1..=m).map(|r| 1.0 / r as f64).sum::<f64>() / m as f64;
    let empirical = total / trials as f64;
    let rel = (empirical - expected).abs() / expected;
    checks.push(("Monte-Carlo AP", rel <= 0.02));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "{} hand/oracle checks, failed: {:?}; Monte-Carlo AP {empirical:.3} vs {expected:.3} ({:.2}% off)",
            checks.len(),
            failed,
            100.0 * rel
        ),
    )
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10(task: &Task, global: &TrainState) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let checkpoint = |state: &TrainState| Checkpoint {
        params: state.params.clone(),
        model: state.model.clone(),
        ensemble: None,
        init: InitMapConfig::new(InitMapKind::Linear),
        seed: 0,
        log: state.log_lines(),
    };
    let a = tmp.path().join("a");
    let ckpt = checkpoint(global);
    ckpt.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    let round_trip = loaded == ckpt;
    let b = tmp.path().join("b");
    loaded.save(&b).unwrap();
    let resaved = dir_bytes(&a) == dir_bytes(&b);

    let text = ctxkernel::context::export_context(&global.params);
    let export = ctxkernel::context::import_context(&text).map(|p| p == global.params).unwrap_or(false);

    let config = TrainConfig {
        max_alternations: 5,
        ..TrainConfig::default()
    };
    let run1 = alternate(&task.train, &config).unwrap();
    let run2 = alternate(&task.train, &config).unwrap();
    let c = tmp.path().join("c");
    let d = tmp.path().join("d");
    checkpoint(&run1).save(&c).unwrap();
    checkpoint(&run2).save(&d).unwrap();
    let deterministic = dir_bytes(&c) == dir_bytes(&d);
    outcome(
        round_trip && resaved && export && deterministic,
        format!(
            "checkpoint round trip: {round_trip}, re-save byte-identical: {resaved}, context export round trip: {export}, fixed-seed runs byte-identical: {deterministic}"
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());

    let task = task();
    let start = Instant::now();
    let global = alternate(&task.train, &TrainConfig::default()).unwrap();
    let train_secs = start.elapsed().as_secs_f64();

    report(4, criterion_4(&task));
    report(5, criterion_5(&task, &global));
    report(6, criterion_6());
    report(7, criterion_7(&task, &global, train_secs));
    report(8, criterion_8(&global));
    report(9, criterion_9());
    report(10, criterion_10(&task, &global));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
