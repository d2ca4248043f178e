//! Dual coordinate descent for the bias-free L1-loss linear SVM
//!
//! ```text
//! min_α  ½ α'Qα − Σα   s.t. 0 ≤ α_i ≤ C,   Q_ij = y_i y_j x_i·x_j
//! ```
//!
//! Each coordinate step is a closed-form clipped Newton update; `w` is kept
//! in sync so a step costs O(D). After every pass, a projected Newton step
//! over the free duals (solved by conjugate gradients, matrix-free) handles
//! the ill-conditioned directions that single coordinates crawl along, such
//! as a component shared by every sample. Termination is on the duality
//! gap.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

use super::SvmConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Array1<f64>,
    pub w: Array1<f64>,
    /// Full passes over the data before termination.
    pub passes: usize,
    /// Primal minus dual objective at the returned point.
    pub gap: f64,
    pub primal: f64,
    pub converged: bool,
}

/// `w = Σ_p y_p α_p x_p`, summed in sample order.
pub fn primal_from_dual(
    alpha: ArrayView1<f64>,
    labels: ArrayView1<f64>,
    features: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    if alpha.len() != labels.len() || alpha.len() != features.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} duals, {} labels, {} samples",
            alpha.len(),
            labels.len(),
            features.nrows()
        )));
    }
    let mut w = Array1::zeros(features.ncols());
    for ((&a, &y), x) in alpha.iter().zip(labels).zip(features.rows()) {
        if a != 0.0 {
            w.scaled_add(y * a, &x);
        }
    }
    Ok(w)
}

/// `½‖w‖² + C Σ max(0, 1 − y w·x)`.
pub fn primal_objective(
    w: ArrayView1<f64>,
    labels: ArrayView1<f64>,
    features: ArrayView2<f64>,
    cost: f64,
) -> f64 {
    let hinge: f64 = features
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - y * w.dot(&x)).max(0.0))
        .sum();
    0.5 * w.dot(&w) + cost * hinge
}

/// `Σα − ½‖w(α)‖²`.
pub fn dual_objective(alpha: ArrayView1<f64>, w: ArrayView1<f64>) -> f64 {
    alpha.sum() - 0.5 * w.dot(&w)
}

/// Solves one binary sub-problem. `warm` seeds the duals (clipped into
/// `[0, C]`); if it already meets the tolerance it is returned untouched.
pub fn train_dual(
    features: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    cost: f64,
    config: &SvmConfig,
    warm: Option<ArrayView1<f64>>,
) -> Result<DualSolution> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} samples but {} labels",
            labels.len()
        )));
    }
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(Error::InvalidParameter(format!("cost must be positive, got {cost}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVM features".into()));
    }
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }

    let mut alpha = match warm {
        Some(a) if a.len() == n => a.mapv(|v| v.clamp(0.0, cost)),
        Some(a) => {
            return Err(Error::ShapeMismatch(format!(
                "warm start has {} duals for {n} samples",
                a.len()
            )))
        }
        None => Array1::zeros(n),
    };
    let diag: Vec<f64> = features.rows().into_iter().map(|x| x.dot(&x)).collect();

    let mut w = primal_from_dual(alpha.view(), labels, features)?;
    let mut primal = primal_objective(w.view(), labels, features, cost);
    let mut gap = primal - dual_objective(alpha.view(), w.view());
    let within = |gap: f64, primal: f64| gap <= config.tol * primal.abs().max(1.0);

    let mut passes = 0;
    let mut converged = within(gap, primal);
    while !converged && passes < config.max_iter {
        for i in 0..n {
            let x = features.row(i);
            let y = labels[i];
            let old = alpha[i];
            let updated = if diag[i] > 0.0 {
                let g = y * w.dot(&x) - 1.0;
                let projected = if old <= 0.0 {
                    g.min(0.0)
                } else if old >= cost {
                    g.max(0.0)
                } else {
                    g
                };
                if projected == 0.0 {
                    continue;
                }
                (old - g / diag[i]).clamp(0.0, cost)
            } else {
                // a zero vector always pays the full hinge
                cost
            };
            if updated != old {
                alpha[i] = updated;
                w.scaled_add((updated - old) * y, &x);
            }
        }
        newton_polish(features, labels, cost, &mut alpha, &mut w);
        passes += 1;
        // resync to the literal sum so the returned w is exactly Σ y α x
        w = primal_from_dual(alpha.view(), labels, features)?;
        primal = primal_objective(w.view(), labels, features, cost);
        gap = primal - dual_objective(alpha.view(), w.view());
        converged = within(gap, primal);
    }
    if !primal.is_finite() {
        return Err(Error::NonFinite("SVM objective".into()));
    }
    Ok(DualSolution {
        alpha,
        w,
        passes,
        gap,
        primal,
        converged,
    })
}

/// `Σ_{i∈set} y_i v_i x_i`.
fn combine(features: ArrayView2<f64>, labels: ArrayView1<f64>, set: &[usize], v: &[f64]) -> Array1<f64> {
    let mut out = Array1::zeros(features.ncols());
    for (&i, &vi) in set.iter().zip(v) {
        if vi != 0.0 {
            out.scaled_add(labels[i] * vi, &features.row(i));
        }
    }
    out
}

/// One projected Newton step on the dual restricted to the variables that
/// can move: `Q_FF d = −g_F` by conjugate gradients, then a backtracking
/// search along the clipped path. Leaves `alpha` untouched unless the dual
/// objective improves.
fn newton_polish(
    features: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    cost: f64,
    alpha: &mut Array1<f64>,
    w: &mut Array1<f64>,
) {
    let n = alpha.len();
    let grad: Vec<f64> = (0..n)
        .map(|i| labels[i] * w.dot(&features.row(i)) - 1.0)
        .collect();
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let a = alpha[i];
            (a > 0.0 && a < cost) || (a <= 0.0 && grad[i] < 0.0) || (a >= cost && grad[i] > 0.0)
        })
        .collect();
    if free.is_empty() {
        return;
    }
    let q_times = |v: &[f64]| -> Vec<f64> {
        let u = combine(features, labels, &free, v);
        free.iter().map(|&j| labels[j] * u.dot(&features.row(j))).collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // CG on Q_FF d = -g_F from d = 0
    let m = free.len();
    let mut d = vec![0.0; m];
    let mut r: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = 1e-24 * rr;
    for _ in 0..m.min(200) {
        let qp = q_times(&p);
        let curvature = dot(&p, &qp);
        if !(curvature > 0.0) {
            break;
        }
        let step = rr / curvature;
        for k in 0..m {
            d[k] += step * p[k];
            r[k] -= step * qp[k];
        }
        let next = dot(&r, &r);
        if next <= stop {
            break;
        }
        let beta = next / rr;
        rr = next;
        for k in 0..m {
            p[k] = r[k] + beta * p[k];
        }
    }

    let dual = |alpha_sum: f64, w: &Array1<f64>| alpha_sum - 0.5 * w.dot(w);
    let base = dual(alpha.sum(), w);
    let mut scale = 1.0;
    for _ in 0..30 {
        let moved: Vec<f64> = free
            .iter()
            .zip(&d)
            .map(|(&i, &di)| (alpha[i] + scale * di).clamp(0.0, cost))
            .collect();
        let delta: Vec<f64> = free.iter().zip(&moved).map(|(&i, &a)| a - alpha[i]).collect();
        let shift = combine(features, labels, &free, &delta);
        let trial_w = &*w + &shift;
        let trial_sum = alpha.sum() + delta.iter().sum::<f64>();
        if dual(trial_sum, &trial_w) > base {
            for (&i, &a) in free.iter().zip(&moved) {
                alpha[i] = a;
            }
            *w = trial_w;
            return;
        }
        scale *= 0.5;
    }
}
