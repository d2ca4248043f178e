//! Alternating optimization of context matrices and SVM weights.
//!
//! Each alternation fits the SVMs on the pooled maps of the current
//! context, then takes one gradient step on the context matrices with the
//! SVM weights frozen.

mod checkpoint;
mod gradcheck;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, kink_safe_model, GradcheckReport};

use ndarray::Array2;
use rayon::prelude::*;

use crate::context::{max_gamma, relative_error, ContextGrad, ContextParams, Pooling, Sharing, Variant};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::featmap::{init_maps, InitMapConfig};
use crate::grid::{GridSpec, NeighborhoodSystem};
use crate::svm::{dual_gradient_wrt_maps, hinge_loss, loss_gradient_wrt_maps, Maps, SvmConfig, SvmModel};

/// Images per unit of parallel work; partial sums are combined in order, so
/// results do not depend on the number of threads.
const CHUNK: usize = 16;

/// How the context weight is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    /// Factor times the smallest per-image bound over the training images.
    Factor(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub depth: usize,
    pub radius: usize,
    pub gamma: GammaChoice,
    pub pooling: Pooling,
    pub learning_rate: f64,
    /// Step multiplier applied after every alternation.
    pub decay: f64,
    pub max_alternations: usize,
    /// Stop when both relative parameter changes fall below this.
    pub tolerance: f64,
    /// Rescale context gradients whose norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Step halvings tried before a context step is skipped; `None` always
    /// takes the full step.
    pub backtracking: Option<usize>,
    pub svm: SvmConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Layerwise,
            depth: 3,
            radius: 1,
            gamma: GammaChoice::Factor(0.9),
            pooling: Pooling::Sum,
            learning_rate: 1e-3,
            decay: 0.98,
            max_alternations: 100,
            tolerance: 1e-4,
            clip_norm: Some(10.0),
            backtracking: Some(8),
            svm: SvmConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.radius == 0 {
            return bad("radius must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if self.max_alternations == 0 {
            return bad("at least one alternation is required".into());
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance must be non-negative, got {}", self.tolerance));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        match self.gamma {
            GammaChoice::Factor(f) | GammaChoice::Fixed(f) if !(f >= 0.0 && f.is_finite()) => {
                bad(format!("gamma setting must be finite and non-negative, got {f}"))
            }
            _ => Ok(()),
        }
    }

    fn sharing(&self) -> Sharing {
        match self.variant {
            Variant::Stationary => Sharing::Stationary,
            _ => Sharing::Layerwise,
        }
    }
}

/// Initial maps and labels of the images a model is fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub grid: GridSpec,
    /// One `d0' x n` matrix per image.
    pub initial: Vec<Array2<f64>>,
    /// `N x K`, entries ±1.
    pub labels: Array2<f64>,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset, split: Split, init: &InitMapConfig) -> Result<Self> {
        let indices = dataset.indices(split);
        let features: Vec<&Array2<f64>> = indices.iter().map(|&i| &dataset.samples[i].features).collect();
        Ok(Self {
            grid: dataset.grid,
            initial: init_maps(features, init)?,
            labels: dataset.label_matrix(&indices),
        })
    }

    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    pub fn concepts(&self) -> usize {
        self.labels.ncols()
    }

    fn check(&self) -> Result<()> {
        if self.labels.nrows() != self.initial.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} label rows for {} images",
                self.labels.nrows(),
                self.initial.len()
            )));
        }
        if self.is_empty() {
            return Err(Error::InvalidParameter("the training split is empty".into()));
        }
        for k in 0..self.concepts() {
            let column = self.labels.column(k);
            if !column.iter().any(|&y| y > 0.0) {
                return Err(Error::NoPositives(Some(format!("concept {k}"))));
            }
            if column.iter().all(|&y| y > 0.0) {
                return Err(Error::SingleClass);
            }
        }
        Ok(())
    }
}

/// Context weight for `config` on these images, using the row-normalized
/// neighborhood as the reference context. An unbounded ratio (no context
/// term at all) falls back to the factor itself.
pub fn choose_gamma(initial: &[Array2<f64>], support: &NeighborhoodSystem, choice: GammaChoice) -> Result<f64> {
    match choice {
        GammaChoice::Fixed(g) => Ok(g),
        GammaChoice::Factor(f) => {
            let contexts = support.normalized_context();
            let bounds = initial
                .par_iter()
                .map(|phi| max_gamma(&phi.t().dot(phi), &contexts))
                .collect::<Result<Vec<f64>>>()?;
            let bound = bounds.into_iter().fold(f64::INFINITY, f64::min);
            Ok(if bound.is_finite() { f * bound } else { f })
        }
    }
}

/// Handcrafted starting context for a global run.
pub fn initial_params(data: &TrainingSet, config: &TrainConfig) -> Result<ContextParams> {
    config.validate()?;
    let support = NeighborhoodSystem::build(data.grid, config.radius)?;
    let gamma = choose_gamma(&data.initial, &support, config.gamma)?;
    Ok(ContextParams::normalized(support, config.depth, config.sharing(), gamma)?.with_pooling(config.pooling))
}

/// Pooled maps of every image under `params`, plus the mean relative error
/// between the last two gram iterates.
pub fn pooled_maps(params: &ContextParams, initial: &[Array2<f64>]) -> Result<(Maps, f64)> {
    let stacks = params.stacks().len();
    let per_image = initial
        .par_iter()
        .map(|phi| {
            (0..stacks)
                .map(|s| {
                    let pass = params.forward(phi, s)?;
                    let t = pass.layers.depth();
                    let re = relative_error(&pass.layers.gram(t), &pass.layers.gram(t - 1))?;
                    Ok((pass.pooled, re))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let n = initial.len();
    let dim = per_image.first().map_or(0, |v| v[0].0.len());
    let mut matrices = vec![Array2::zeros((n, dim)); stacks];
    let mut re_total = 0.0;
    for (p, image) in per_image.iter().enumerate() {
        for (s, (pooled, re)) in image.iter().enumerate() {
            matrices[s].row_mut(p).assign(pooled);
            re_total += re;
        }
    }
    let re = if n == 0 { 0.0 } else { re_total / (n * stacks) as f64 };
    let maps = if params.is_classwise() {
        Maps::PerConcept(matrices)
    } else {
        Maps::Shared(matrices.pop().expect("one global stack"))
    };
    Ok((maps, re))
}

/// Objective at `params` with the SVM weights of `model` held fixed.
pub fn objective(params: &ContextParams, model: &SvmModel, data: &TrainingSet) -> Result<f64> {
    let (maps, _) = pooled_maps(params, &data.initial)?;
    hinge_loss(model, &maps, &data.labels)
}

/// `∂E/∂P` with `model` frozen, given the pooled maps at `params`.
pub fn context_gradient(
    params: &ContextParams,
    model: &SvmModel,
    data: &TrainingSet,
    maps: &Maps,
) -> Result<ContextGrad> {
    backpropagate(params, data, &loss_gradient_wrt_maps(model, maps, &data.labels)?)
}

/// Gradient of the refitted objective `min_w E(P, w)`: as
/// [`context_gradient`], but samples on the hinge kink are weighted by
/// their dual coefficients. `model` must be the optimum at `params`.
pub fn refit_gradient(
    params: &ContextParams,
    model: &SvmModel,
    data: &TrainingSet,
    maps: &Maps,
) -> Result<ContextGrad> {
    backpropagate(params, data, &dual_gradient_wrt_maps(model, maps, &data.labels)?)
}

/// Pushes per-sample pooled-map gradients through every image's network.
pub fn backpropagate(params: &ContextParams, data: &TrainingSet, grad_maps: &Maps) -> Result<ContextGrad> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let partials = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = ContextGrad::zeros_like(params);
            for &p in chunk {
                for s in 0..params.stacks().len() {
                    let g = grad_maps.concept(s);
                    let row = g.row(p);
                    if row.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let pass = params.forward(&data.initial[p], s)?;
                    let stack_grad = params.backward_stack(&pass.layers, row, s)?;
                    acc.stacks[s].add_layers(&stack_grad);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ContextGrad::zeros_like(params);
    for part in &partials {
        total.add_assign(part);
    }
    params.tie_layers(&mut total);
    Ok(total)
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alternation {
    pub index: usize,
    /// Objective right after the SVM phase.
    pub loss: f64,
    /// Relative context change of the step that preceded this SVM phase.
    pub d_p: f64,
    /// Relative change of the SVM weights against the previous phase.
    pub d_w: f64,
    /// Mean relative error between the last two gram iterates.
    pub re: f64,
}

impl Alternation {
    pub fn log_line(&self) -> String {
        format!(
            "alt {} loss {:.17e} dP {:.6e} dW {:.6e}",
            self.index, self.loss, self.d_p, self.d_w
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ContextParams,
    pub model: SvmModel,
    pub history: Vec<Alternation>,
    /// Whether the stopping rule fired before the budget ran out.
    pub converged: bool,
}

impl TrainState {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|a| a.loss).collect()
    }

    pub fn relative_errors(&self) -> Vec<f64> {
        self.history.iter().map(|a| a.re).collect()
    }

    pub fn log_lines(&self) -> Vec<String> {
        self.history.iter().map(Alternation::log_line).collect()
    }
}

fn relative_change(new: &Array2<f64>, old: &Array2<f64>) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum();
    let base: f64 = old.iter().map(|v| v * v).sum();
    diff.sqrt() / base.sqrt().max(f64::MIN_POSITIVE)
}

/// Global training from the handcrafted context; the variant picks
/// layerwise or stationary sharing (classwise runs train a layerwise
/// global context).
pub fn alternate(data: &TrainingSet, config: &TrainConfig) -> Result<TrainState> {
    let params = initial_params(data, config)?;
    run(data, params, config, None, &mut |_, _| {})
}

/// Training from explicit starting params. `observe` sees the params after
/// every context step, with the index of the alternation that took it.
pub fn train_from(
    data: &TrainingSet,
    params: ContextParams,
    config: &TrainConfig,
    warm_model: Option<&SvmModel>,
    observe: &mut dyn FnMut(usize, &ContextParams),
) -> Result<TrainState> {
    run(data, params, config, warm_model.cloned(), observe)
}

/// Global training with one set of context matrices shared by all layers.
pub fn train_stationary(data: &TrainingSet, config: &TrainConfig) -> Result<TrainState> {
    let config = TrainConfig {
        variant: Variant::Stationary,
        ..config.clone()
    };
    alternate(data, &config)
}

/// Per-concept refinement: every concept gets a copy of `warm` and is
/// then trained on its own share of the loss. `warm_model` seeds the first
/// SVM phase.
pub fn train_classwise(
    data: &TrainingSet,
    config: &TrainConfig,
    warm: &ContextParams,
    warm_model: Option<&SvmModel>,
) -> Result<TrainState> {
    let params = warm.to_classwise(data.concepts())?;
    run(data, params, config, warm_model.cloned(), &mut |_, _| {})
}

/// Runs the variant named in `config`; classwise first trains the global
/// context it starts from.
pub fn train(data: &TrainingSet, config: &TrainConfig) -> Result<TrainState> {
    match config.variant {
        Variant::Layerwise => alternate(data, config),
        Variant::Stationary => train_stationary(data, config),
        Variant::Classwise => {
            let global = alternate(data, config)?;
            train_classwise(data, config, &global.params, Some(&global.model))
        }
    }
}

fn run(
    data: &TrainingSet,
    mut params: ContextParams,
    config: &TrainConfig,
    warm_model: Option<SvmModel>,
    observe: &mut dyn FnMut(usize, &ContextParams),
) -> Result<TrainState> {
    config.validate()?;
    data.check()?;
    let mut history = Vec::new();
    let mut initial_loss = None;
    let mut last_dp = 0.0;
    let mut converged = false;
    let mut previous = warm_model.as_ref().map(|m| m.weights.clone());
    let mut warm = warm_model;
    let mut model = None;

    for i in 0..config.max_alternations {
        let (maps, re) = pooled_maps(&params, &data.initial)?;
        let fitted = SvmModel::train(&maps, &data.labels, &config.svm, warm.as_ref())?;
        let loss = hinge_loss(&fitted, &maps, &data.labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("objective at alternation {i}")));
        }
        let d_w = match &previous {
            Some(prev) if prev.dim() == fitted.weights.dim() => relative_change(&fitted.weights, prev),
            _ => f64::INFINITY,
        };
        let initial = *initial_loss.get_or_insert(loss);
        if loss > 10.0 * initial {
            return Err(Error::DivergenceDetected {
                alternation: i,
                objective: loss,
                initial,
            });
        }
        let record = Alternation {
            index: i,
            loss,
            d_p: last_dp,
            d_w,
            re,
        };
        log::info!("{}", record.log_line());
        history.push(record);
        previous = Some(fitted.weights.clone());

        if i > 0 && last_dp.max(d_w) < config.tolerance {
            model = Some(fitted);
            converged = true;
            break;
        }
        if i + 1 == config.max_alternations {
            model = Some(fitted);
            break;
        }
        let step = config.learning_rate * config.decay.powi(i as i32);
        let (dp, refit) = descend(data, &mut params, &fitted, &maps, loss, step, config)?;
        last_dp = dp;
        warm = Some(refit.unwrap_or(fitted));
        if params.sharing() == Sharing::Stationary && !params.stacks().iter().all(|s| s.is_stationary()) {
            return Err(Error::StateMismatch(format!("stationary layers diverged at alternation {i}")));
        }
        observe(i, &params);
    }

    Ok(TrainState {
        params,
        model: model.expect("the loop ends on an SVM phase"),
        history,
        converged,
    })
}

/// One context step along the refit gradient. Returns the relative
/// parameter change and, when a line search ran, the SVM refitted at the
/// accepted params.
fn descend(
    data: &TrainingSet,
    params: &mut ContextParams,
    model: &SvmModel,
    maps: &Maps,
    loss: f64,
    step: f64,
    config: &TrainConfig,
) -> Result<(f64, Option<SvmModel>)> {
    if step == 0.0 || params.gamma() == 0.0 {
        return Ok((0.0, None));
    }
    let mut grad = refit_gradient(params, model, data, maps)?;
    let norm = grad.norm(params.sharing());
    if !norm.is_finite() {
        return Err(Error::NonFinite("context gradient".into()));
    }
    if norm == 0.0 {
        return Ok((0.0, None));
    }
    if let Some(clip) = config.clip_norm {
        if norm > clip {
            grad.scale(clip / norm);
        }
    }
    let base = params.parameter_norm().max(f64::MIN_POSITIVE);
    let Some(halvings) = config.backtracking else {
        return Ok((params.apply_step(&grad, step)? / base, None));
    };
    let mut step = step;
    for _ in 0..=halvings {
        let mut trial = params.clone();
        let change = trial.apply_step(&grad, step)?;
        let (trial_maps, _) = pooled_maps(&trial, &data.initial)?;
        let refit = SvmModel::train(&trial_maps, &data.labels, &config.svm, Some(model))?;
        if hinge_loss(&refit, &trial_maps, &data.labels)? <= loss {
            *params = trial;
            return Ok((change / base, Some(refit)));
        }
        step *= 0.5;
    }
    log::debug!("context step rejected after {halvings} halvings");
    Ok((0.0, None))
}
