use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::{ContextGrad, ContextParams, ContextStack, Sharing};
use crate::error::{Error, Result};

/// How final-layer cell maps are combined into one image vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Sum => "sum",
            Pooling::Mean => "mean",
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::InvalidParameter(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Per-cell maps `Φ^(0) … Φ^(T)` of one image; `Φ^(t)` is `D_t x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Array2<f64>>,
}

impl LayerStack {
    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    pub fn initial(&self) -> &Array2<f64> {
        &self.layers[0]
    }

    pub fn last(&self) -> &Array2<f64> {
        self.layers.last().expect("stack holds at least the initial map")
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Gram matrix `Φ^(t)' Φ^(t)` of layer `t`.
    pub fn gram(&self, t: usize) -> Array2<f64> {
        self.layers[t].t().dot(&self.layers[t])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub layers: LayerStack,
    pub pooled: Array1<f64>,
}

/// One layer of the map recursion: column `x` of the output stacks the
/// initial map of `x` over `sqrt(gamma) * Σ_x' P_c[x, x'] Φ_t[:, x']` for
/// every direction `c`.
pub fn forward_layer(
    initial: &Array2<f64>,
    previous: &Array2<f64>,
    contexts: &[Array2<f64>],
    gamma: f64,
) -> Result<Array2<f64>> {
    let n = initial.ncols();
    if previous.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "layer has {} cells, initial map has {n}",
            previous.ncols()
        )));
    }
    if let Some(bad) = contexts.iter().find(|p| p.dim() != (n, n)) {
        return Err(Error::ShapeMismatch(format!(
            "context matrix is {}x{}, expected {n}x{n}",
            bad.nrows(),
            bad.ncols()
        )));
    }
    let d0 = initial.nrows();
    let dt = previous.nrows();
    let scale = gamma.sqrt();
    let mut out = Array2::zeros((d0 + contexts.len() * dt, n));
    out.slice_mut(s![..d0, ..]).assign(initial);
    for (c, p) in contexts.iter().enumerate() {
        let mut block = out.slice_mut(s![d0 + c * dt..d0 + (c + 1) * dt, ..]);
        block.assign(&previous.dot(&p.t()));
        block *= scale;
    }
    Ok(out)
}

/// Runs every layer of `contexts` over the initial map and pools the last.
pub fn forward(
    initial: &Array2<f64>,
    contexts: &ContextStack,
    gamma: f64,
    pooling: Pooling,
) -> Result<ForwardPass> {
    if contexts.depth() == 0 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    let mut layers = Vec::with_capacity(contexts.depth() + 1);
    layers.push(initial.clone());
    for t in 0..contexts.depth() {
        let next = forward_layer(initial, &layers[t], contexts.layer(t), gamma)?;
        layers.push(next);
    }
    let stack = LayerStack { layers };
    let pooled = pool(stack.last(), pooling);
    Ok(ForwardPass {
        layers: stack,
        pooled,
    })
}

fn pool(last: &Array2<f64>, pooling: Pooling) -> Array1<f64> {
    let summed = last.sum_axis(Axis(1));
    match pooling {
        Pooling::Sum => summed,
        Pooling::Mean => summed / last.ncols() as f64,
    }
}

/// Gradients of a loss w.r.t. every context matrix of one stack, given the
/// gradient w.r.t. the pooled map. Result is indexed `[layer][direction]`,
/// unmasked.
pub fn backward(
    stack: &LayerStack,
    grad_pooled: ArrayView1<f64>,
    contexts: &ContextStack,
    gamma: f64,
    pooling: Pooling,
) -> Result<Vec<Vec<Array2<f64>>>> {
    let depth = stack.depth();
    if depth != contexts.depth() {
        return Err(Error::StateMismatch(format!(
            "stack has {depth} layers, context has {}",
            contexts.depth()
        )));
    }
    let last = stack.last();
    let n = last.ncols();
    if grad_pooled.len() != last.nrows() {
        return Err(Error::StateMismatch(format!(
            "pooled gradient has {} entries, final layer has {}",
            grad_pooled.len(),
            last.nrows()
        )));
    }
    let d0 = stack.initial().nrows();
    let scale = gamma.sqrt();
    let column_weight = match pooling {
        Pooling::Sum => 1.0,
        Pooling::Mean => 1.0 / n as f64,
    };

    // dE/dΦ^(T): every cell receives the pooled gradient.
    let mut upstream = Array2::zeros((last.nrows(), n));
    for mut col in upstream.columns_mut() {
        col.scaled_add(column_weight, &grad_pooled);
    }

    let mut grads = vec![Vec::new(); depth];
    for t in (0..depth).rev() {
        let below = &stack.layers[t];
        let dt = below.nrows();
        let directions = contexts.layer(t);
        if upstream.nrows() != d0 + directions.len() * dt {
            return Err(Error::StateMismatch(format!(
                "layer {} has {} rows, expected {}",
                t + 1,
                upstream.nrows(),
                d0 + directions.len() * dt
            )));
        }
        let mut layer_grads = Vec::with_capacity(directions.len());
        let mut down = (t > 0).then(|| Array2::<f64>::zeros((dt, n)));
        for (c, p) in directions.iter().enumerate() {
            let block = upstream.slice(s![d0 + c * dt..d0 + (c + 1) * dt, ..]);
            let mut g = block.t().dot(below);
            g *= scale;
            layer_grads.push(g);
            if let Some(down) = down.as_mut() {
                down.scaled_add(scale, &block.dot(p));
            }
        }
        grads[t] = layer_grads;
        if let Some(down) = down {
            upstream = down;
        }
    }
    Ok(grads)
}

impl ContextParams {
    /// Forward pass through stack `stack` of these params.
    pub fn forward(&self, initial: &Array2<f64>, stack: usize) -> Result<ForwardPass> {
        if initial.ncols() != self.cells() {
            return Err(Error::ShapeMismatch(format!(
                "image has {} cells, context expects {}",
                initial.ncols(),
                self.cells()
            )));
        }
        forward(initial, &self.stacks[stack], self.gamma, self.pooling)
    }

    /// Masked raw gradient for one stack, per layer.
    pub fn backward_stack(
        &self,
        layers: &LayerStack,
        grad_pooled: ArrayView1<f64>,
        stack: usize,
    ) -> Result<ContextStack> {
        let raw = backward(layers, grad_pooled, &self.stacks[stack], self.gamma, self.pooling)?;
        let masked = raw
            .into_iter()
            .map(|layer| {
                layer
                    .into_iter()
                    .zip(self.support.masks())
                    .map(|(mut g, mask)| {
                        ndarray::Zip::from(&mut g).and(mask).for_each(|g, &on| {
                            if !on {
                                *g = 0.0;
                            }
                        });
                        g
                    })
                    .collect()
            })
            .collect();
        Ok(ContextStack::new(masked))
    }

    /// `∂E/∂P` for one image whose pooled map fed stack `stack`, shaped like
    /// the params. Stationary stacks receive the sum over layers at every
    /// layer.
    pub fn backward(
        &self,
        layers: &LayerStack,
        grad_pooled: ArrayView1<f64>,
        stack: usize,
    ) -> Result<ContextGrad> {
        let mut grad = ContextGrad::zeros_like(self);
        grad.stacks[stack] = self.backward_stack(layers, grad_pooled, stack)?;
        self.tie_layers(&mut grad);
        Ok(grad)
    }

    /// Sums per-layer gradients of stationary stacks; no-op when layerwise.
    pub fn tie_layers(&self, grad: &mut ContextGrad) {
        if self.sharing == Sharing::Stationary {
            for s in grad.stacks.iter_mut() {
                *s = s.summed_over_layers();
            }
        }
    }
}
