//! Learnable spatial context.
//!
//! A context network maps each cell through `T` layers. Layer `t` combines
//! the fixed initial map with `C` direction-typed linear mixes of the
//! previous layer, weighted by the context matrices `P_c^(t)` and the
//! scalar `gamma`. Parameters live on the support of the neighborhood
//! masks; off-support entries are exactly zero at all times.

mod export;
mod gram;
mod network;

pub use export::{export_context, import_context, read_context, write_context};
pub use gram::{gram_iterates, gram_recursion, max_gamma, relative_error, relative_error_trace};
pub use network::{backward, forward, forward_layer, ForwardPass, LayerStack, Pooling};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::NeighborhoodSystem;

/// Whether each layer owns its context matrices or all layers share one set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    Layerwise,
    Stationary,
}

impl Sharing {
    pub fn as_str(self) -> &'static str {
        match self {
            Sharing::Layerwise => "layerwise",
            Sharing::Stationary => "stationary",
        }
    }
}

impl FromStr for Sharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layerwise" => Ok(Sharing::Layerwise),
            "stationary" => Ok(Sharing::Stationary),
            other => Err(Error::InvalidParameter(format!("unknown sharing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Layerwise,
    Stationary,
    Classwise,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Layerwise => "layerwise",
            Variant::Stationary => "stationary",
            Variant::Classwise => "classwise",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layerwise" => Ok(Variant::Layerwise),
            "stationary" => Ok(Variant::Stationary),
            "classwise" => Ok(Variant::Classwise),
            other => Err(Error::InvalidParameter(format!(
                "unknown variant `{other}` (expected layerwise, stationary or classwise)"
            ))),
        }
    }
}

/// Context matrices of one network, indexed `[layer][direction]`.
///
/// Stationary stacks still keep one instance per layer; they start equal
/// and receive identical updates, so they stay bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextStack {
    layers: Vec<Vec<Array2<f64>>>,
}

impl ContextStack {
    pub fn new(layers: Vec<Vec<Array2<f64>>>) -> Self {
        Self { layers }
    }

    /// `depth` copies of the same set of matrices.
    pub fn replicated(contexts: &[Array2<f64>], depth: usize) -> Self {
        Self {
            layers: vec![contexts.to_vec(); depth],
        }
    }

    pub fn zeros(depth: usize, directions: usize, cells: usize) -> Self {
        Self {
            layers: vec![vec![Array2::zeros((cells, cells)); directions]; depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, t: usize) -> &[Array2<f64>] {
        &self.layers[t]
    }

    pub fn layer_mut(&mut self, t: usize) -> &mut [Array2<f64>] {
        &mut self.layers[t]
    }

    pub fn layers(&self) -> &[Vec<Array2<f64>>] {
        &self.layers
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|m| m.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Adds `other` layer by layer.
    pub fn add_layers(&mut self, other: &ContextStack) {
        for (la, lb) in self.layers.iter_mut().zip(&other.layers) {
            for (ma, mb) in la.iter_mut().zip(lb) {
                *ma += mb;
            }
        }
    }

    /// Whether every layer holds bit-identical matrices.
    pub fn is_stationary(&self) -> bool {
        self.layers.windows(2).all(|w| {
            w[0].iter()
                .zip(&w[1])
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
        })
    }

    /// Sum of the per-layer matrices, replicated at every layer.
    pub fn summed_over_layers(&self) -> Self {
        let mut total = self.layers[0].clone();
        for layer in &self.layers[1..] {
            for (acc, m) in total.iter_mut().zip(layer) {
                *acc += m;
            }
        }
        Self::replicated(&total, self.depth())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.dim() == y.dim()))
    }
}

/// Gradient of the loss w.r.t. every context stack, shaped like the params.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGrad {
    pub stacks: Vec<ContextStack>,
}

impl ContextGrad {
    pub fn zeros_like(params: &ContextParams) -> Self {
        Self {
            stacks: params
                .stacks
                .iter()
                .map(|s| ContextStack::zeros(s.depth(), params.directions(), params.cells()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ContextGrad) {
        for (a, b) in self.stacks.iter_mut().zip(&other.stacks) {
            a.add_layers(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.stacks.iter_mut().flat_map(|s| s.layers.iter_mut().flatten()) {
            *m *= factor;
        }
    }

    /// Euclidean norm over distinct parameters: a stationary stack counts
    /// its shared matrices once.
    pub fn norm(&self, sharing: Sharing) -> f64 {
        self.stacks
            .iter()
            .map(|s| match sharing {
                Sharing::Layerwise => s.squared_norm(),
                Sharing::Stationary => s.layers[0]
                    .iter()
                    .map(|m| m.iter().map(|v| v * v).sum::<f64>())
                    .sum(),
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.stacks
            .iter()
            .flat_map(|s| s.layers.iter().flatten())
            .flat_map(|m| m.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextParams {
    gamma: f64,
    sharing: Sharing,
    classwise: bool,
    stacks: Vec<ContextStack>,
    support: NeighborhoodSystem,
    pooling: Pooling,
}

impl ContextParams {
    /// Handcrafted start: every layer holds the row-normalized masks.
    pub fn normalized(
        support: NeighborhoodSystem,
        depth: usize,
        sharing: Sharing,
        gamma: f64,
    ) -> Result<Self> {
        let stack = ContextStack::replicated(&support.normalized_context(), depth);
        Self::from_stacks(support, sharing, false, gamma, vec![stack])
    }

    pub fn from_stacks(
        support: NeighborhoodSystem,
        sharing: Sharing,
        classwise: bool,
        gamma: f64,
        stacks: Vec<ContextStack>,
    ) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and non-negative, got {gamma}"
            )));
        }
        let depth = stacks.first().map(ContextStack::depth).unwrap_or(0);
        if depth == 0 {
            return Err(Error::InvalidParameter("depth must be at least 1".into()));
        }
        if !classwise && stacks.len() != 1 {
            return Err(Error::InvalidParameter(
                "a global context holds exactly one stack".into(),
            ));
        }
        let n = support.cells();
        let c = support.directions();
        for stack in &stacks {
            if stack.depth() != depth {
                return Err(Error::ShapeMismatch("stacks differ in depth".into()));
            }
            for layer in &stack.layers {
                if layer.len() != c || layer.iter().any(|m| m.dim() != (n, n)) {
                    return Err(Error::ShapeMismatch(format!(
                        "each layer needs {c} matrices of shape {n}x{n}"
                    )));
                }
            }
            if sharing == Sharing::Stationary && !stack.is_stationary() {
                return Err(Error::InvalidParameter(
                    "stationary stacks need identical layers".into(),
                ));
            }
        }
        let params = Self {
            gamma,
            sharing,
            classwise,
            stacks,
            support,
            pooling: Pooling::Sum,
        };
        if let Some((c, x, y)) = params.off_support_entry() {
            return Err(Error::InvalidParameter(format!(
                "non-zero context weight off the neighborhood support at direction {c}, ({x}, {y})"
            )));
        }
        Ok(params)
    }

    /// Warm start for classwise training: `classes` copies of this context.
    pub fn to_classwise(&self, classes: usize) -> Result<Self> {
        if self.classwise {
            return Err(Error::InvalidParameter("context is already classwise".into()));
        }
        if classes == 0 {
            return Err(Error::InvalidParameter("classwise context needs K >= 1".into()));
        }
        Ok(Self {
            classwise: true,
            stacks: vec![self.stacks[0].clone(); classes],
            ..self.clone()
        })
    }

    /// Same tensors, each layer updated independently.
    pub fn to_layerwise(&self) -> Self {
        Self {
            sharing: Sharing::Layerwise,
            ..self.clone()
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and non-negative, got {gamma}"
            )));
        }
        self.gamma = gamma;
        Ok(())
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn sharing(&self) -> Sharing {
        self.sharing
    }

    pub fn is_classwise(&self) -> bool {
        self.classwise
    }

    pub fn variant(&self) -> Variant {
        match (self.classwise, self.sharing) {
            (true, _) => Variant::Classwise,
            (false, Sharing::Layerwise) => Variant::Layerwise,
            (false, Sharing::Stationary) => Variant::Stationary,
        }
    }

    pub fn depth(&self) -> usize {
        self.stacks[0].depth()
    }

    pub fn directions(&self) -> usize {
        self.support.directions()
    }

    pub fn cells(&self) -> usize {
        self.support.cells()
    }

    pub fn support(&self) -> &NeighborhoodSystem {
        &self.support
    }

    pub fn stacks(&self) -> &[ContextStack] {
        &self.stacks
    }

    pub fn stack(&self, index: usize) -> &ContextStack {
        &self.stacks[index]
    }

    /// Stack feeding concept `k`: its own stack when classwise, else the global one.
    pub fn stack_for_concept(&self, k: usize) -> &ContextStack {
        if self.classwise {
            &self.stacks[k]
        } else {
            &self.stacks[0]
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.stacks.iter().map(ContextStack::squared_norm).sum()
    }

    /// Norm over distinct parameters; a stationary stack counts once.
    pub fn parameter_norm(&self) -> f64 {
        self.stacks
            .iter()
            .map(|s| match self.sharing {
                Sharing::Layerwise => s.squared_norm(),
                Sharing::Stationary => s.layers[0]
                    .iter()
                    .map(|m| m.iter().map(|v| v * v).sum::<f64>())
                    .sum(),
            })
            .sum::<f64>()
            .sqrt()
    }

    fn off_support_entry(&self) -> Option<(usize, usize, usize)> {
        for stack in &self.stacks {
            for layer in &stack.layers {
                for (c, m) in layer.iter().enumerate() {
                    let mask = self.support.mask(c);
                    for ((x, y), v) in m.indexed_iter() {
                        if !mask[[x, y]] && v.to_bits() != 0 {
                            return Some((c, x, y));
                        }
                    }
                }
            }
        }
        None
    }

    /// Whether every off-support entry is exactly `+0.0`.
    pub fn respects_support(&self) -> bool {
        self.off_support_entry().is_none()
    }

    /// Gradient step `P <- P - step * grad`, applied on the support only.
    /// Returns the Frobenius norm of the change.
    pub fn apply_step(&mut self, grad: &ContextGrad, step: f64) -> Result<f64> {
        if grad.stacks.len() != self.stacks.len()
            || !grad.stacks.iter().zip(&self.stacks).all(|(g, s)| g.same_shape(s))
        {
            return Err(Error::StateMismatch("gradient shape differs from params".into()));
        }
        let mut change = 0.0;
        let masks = self.support.masks().to_vec();
        for (stack, gstack) in self.stacks.iter_mut().zip(&grad.stacks) {
            for (t, (layer, glayer)) in stack.layers.iter_mut().zip(&gstack.layers).enumerate() {
                for ((p, g), mask) in layer.iter_mut().zip(glayer).zip(&masks) {
                    ndarray::Zip::from(p).and(g).and(mask).for_each(|p, &g, &on| {
                        if on {
                            let delta = step * g;
                            *p -= delta;
                            // stationary layers carry one parameter set
                            if t == 0 || self.sharing == Sharing::Layerwise {
                                change += delta * delta;
                            }
                        }
                    });
                }
            }
        }
        Ok(change.sqrt())
    }
}
