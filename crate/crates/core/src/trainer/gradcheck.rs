//! Finite-difference check of the context gradient through the whole
//! pipeline: frozen SVM weights, pooling and every context layer.

use ndarray::Array2;

use super::{context_gradient, objective, pooled_maps, TrainingSet};
use crate::context::{ContextGrad, ContextParams, Sharing};
use crate::error::{Error, Result};
use crate::svm::{Maps, SvmModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
    /// Distinct parameters checked.
    pub entries: usize,
    /// Smallest distance of any margin from the hinge kink.
    pub kink_gap: f64,
}

fn margins(w: ndarray::ArrayView1<f64>, maps: ndarray::ArrayView2<f64>, labels: ndarray::ArrayView1<f64>) -> Vec<f64> {
    maps.rows().into_iter().zip(labels).map(|(phi, &y)| y * w.dot(&phi)).collect()
}

/// Rescales each `w_k` so that every margin `Y w_k·φ` stays at least
/// `min_gap` away from 1, trying scales close to 1 first. Returns the
/// adjusted model and the smallest gap achieved.
pub fn kink_safe_model(model: &SvmModel, maps: &Maps, labels: &Array2<f64>, min_gap: f64) -> Result<(SvmModel, f64)> {
    if labels.dim() != (maps.samples(), model.concepts()) {
        return Err(Error::ShapeMismatch("labels do not match maps and model".into()));
    }
    let mut scales = vec![1.0];
    for j in 1..=60 {
        scales.push(1.05f64.powi(j));
        scales.push(1.05f64.powi(-j));
    }
    let mut out = model.clone().without_duals();
    let mut worst = f64::INFINITY;
    for k in 0..model.concepts() {
        let m = margins(model.weights.row(k), maps.concept(k), labels.column(k));
        let gap = |s: f64| m.iter().map(|v| (s * v - 1.0).abs()).fold(f64::INFINITY, f64::min);
        let mut best = (1.0, gap(1.0));
        for &s in &scales {
            let g = gap(s);
            if g >= min_gap {
                best = (s, g);
                break;
            }
            if g > best.1 {
                best = (s, g);
            }
        }
        out.weights.row_mut(k).mapv_inplace(|v| v * best.0);
        worst = worst.min(best.1);
    }
    Ok((out, worst))
}

/// Compares the analytic context gradient with central differences of step
/// `step` at every on-support parameter. A stationary parameter is one
/// shared matrix entry, perturbed in all layers at once. `model` is first
/// moved off the hinge kink by [`kink_safe_model`] with gap 0.05.
pub fn gradcheck(data: &TrainingSet, params: &ContextParams, model: &SvmModel, step: f64) -> Result<GradcheckReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {step}")));
    }
    let (maps, _) = pooled_maps(params, &data.initial)?;
    let (model, kink_gap) = kink_safe_model(model, &maps, &data.labels, 0.05)?;
    let analytic = context_gradient(params, &model, data, &maps)?;

    let layers: Vec<usize> = match params.sharing() {
        Sharing::Layerwise => (0..params.depth()).collect(),
        Sharing::Stationary => vec![0],
    };
    let support = params.support().clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_grad: 0.0,
        entries: 0,
        kink_gap,
    };
    for s in 0..params.stacks().len() {
        for &t in &layers {
            for c in 0..params.directions() {
                for ((x, y), &on) in support.mask(c).indexed_iter() {
                    if !on {
                        continue;
                    }
                    let mut unit = ContextGrad::zeros_like(params);
                    let touched: Vec<usize> = match params.sharing() {
                        Sharing::Layerwise => vec![t],
                        Sharing::Stationary => (0..params.depth()).collect(),
                    };
                    for &l in &touched {
                        unit.stacks[s].layer_mut(l)[c][[x, y]] = 1.0;
                    }
                    let mut plus = params.clone();
                    plus.apply_step(&unit, -step)?;
                    let mut minus = params.clone();
                    minus.apply_step(&unit, step)?;
                    let numeric = (objective(&plus, &model, data)? - objective(&minus, &model, data)?) / (2.0 * step);
                    let a = analytic.stacks[s].layer(t)[c][[x, y]];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.max_abs_grad = report.max_abs_grad.max(a.abs());
                    report.entries += 1;
                }
            }
        }
    }
    Ok(report)
}
