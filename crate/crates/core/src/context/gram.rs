use ndarray::{s, Array2};

use super::ContextStack;
use crate::error::{Error, Result};

/// `P̂ K P̂'` where `P̂` is `p` repeated block-diagonally over however many
/// images `k` spans. Cells of different images are never neighbors.
fn lifted_congruence(p: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let n = p.nrows();
    let blocks = k.nrows() / n;
    let mut out = Array2::zeros(k.dim());
    for a in 0..blocks {
        for b in 0..blocks {
            let kab = k.slice(s![a * n..(a + 1) * n, b * n..(b + 1) * n]);
            let block = p.dot(&kab).dot(&p.t());
            out.slice_mut(s![a * n..(a + 1) * n, b * n..(b + 1) * n])
                .assign(&block);
        }
    }
    out
}

fn context_term(contexts: &[Array2<f64>], k: &Array2<f64>) -> Array2<f64> {
    let mut acc = Array2::zeros(k.dim());
    for p in contexts {
        acc += &lifted_congruence(p, k);
    }
    acc
}

fn check_gram(s: &Array2<f64>, cells: usize) -> Result<()> {
    let (r, c) = s.dim();
    if r != c || cells == 0 || r % cells != 0 {
        return Err(Error::ShapeMismatch(format!(
            "gram matrix is {r}x{c}; expected a square multiple of {cells} cells"
        )));
    }
    Ok(())
}

/// All iterates `K^(0) = S`, `K^(t+1) = S + γ Σ_c P_c^(t) K^(t) P_c^(t)'`.
pub fn gram_iterates(s: &Array2<f64>, contexts: &ContextStack, gamma: f64) -> Result<Vec<Array2<f64>>> {
    let cells = contexts.layer(0).first().map(|p| p.nrows()).unwrap_or(0);
    check_gram(s, cells)?;
    let mut iterates = vec![s.clone()];
    for t in 0..contexts.depth() {
        let mut next = context_term(contexts.layer(t), &iterates[t]);
        next *= gamma;
        next += s;
        iterates.push(next);
    }
    Ok(iterates)
}

/// Closed-form kernel after `T = contexts.depth()` iterations.
pub fn gram_recursion(s: &Array2<f64>, contexts: &ContextStack, gamma: f64) -> Result<Array2<f64>> {
    Ok(gram_iterates(s, contexts, gamma)?
        .pop()
        .expect("iterates include K^(0)"))
}

/// Mean over entries of `|K_t - K_prev| / |K_t + K_prev|`; entries whose
/// sum is below `1e-30` in magnitude contribute zero.
pub fn relative_error(current: &Array2<f64>, previous: &Array2<f64>) -> Result<f64> {
    if current.dim() != previous.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            current.dim(),
            previous.dim()
        )));
    }
    if current.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = current
        .iter()
        .zip(previous)
        .map(|(&a, &b)| {
            let sum = (a + b).abs();
            if sum < 1e-30 {
                0.0
            } else {
                (a - b).abs() / sum
            }
        })
        .sum();
    Ok(total / current.len() as f64)
}

/// `RE^(t)` between consecutive iterates, for `t = 1..=T`.
pub fn relative_error_trace(iterates: &[Array2<f64>]) -> Result<Vec<f64>> {
    iterates
        .windows(2)
        .map(|w| relative_error(&w[1], &w[0]))
        .collect()
}

/// Frobenius-norm ratio `‖S‖ / ‖Σ_c P_c S P_c'‖` bounding the context
/// weight. Returns `+∞` when the context term vanishes.
pub fn max_gamma(s: &Array2<f64>, contexts: &[Array2<f64>]) -> Result<f64> {
    let cells = contexts.first().map(|p| p.nrows()).unwrap_or(0);
    if cells == 0 {
        return Ok(f64::INFINITY);
    }
    check_gram(s, cells)?;
    let numerator = frobenius(s);
    let denominator = frobenius(&context_term(contexts, s));
    if denominator == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(numerator / denominator)
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
