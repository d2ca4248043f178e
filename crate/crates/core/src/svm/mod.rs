//! One-vs-rest linear SVMs on pooled maps, without bias: `f_k(p) = w_k·φ_p`.

mod ensemble;
mod solver;

pub use ensemble::{read_ensemble, train_ensemble, write_ensemble, Ensemble, EnsembleMember, EnsembleModel};
pub use solver::{dual_objective, primal_from_dual, primal_objective, train_dual, DualSolution};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CKSV";

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    /// Cost shared by every concept unless `concept_costs` is set.
    pub cost: f64,
    pub concept_costs: Option<Vec<f64>>,
    /// Maximum passes over the training set.
    pub max_iter: usize,
    /// Relative duality-gap tolerance.
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            cost: 1.0,
            concept_costs: None,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

impl SvmConfig {
    pub fn cost(&self, concept: usize) -> f64 {
        self.concept_costs
            .as_ref()
            .and_then(|c| c.get(concept).copied())
            .unwrap_or(self.cost)
    }

    pub fn costs(&self, concepts: usize) -> Vec<f64> {
        (0..concepts).map(|k| self.cost(k)).collect()
    }

    pub fn validate(&self, concepts: usize) -> Result<()> {
        if let Some(c) = &self.concept_costs {
            if c.len() != concepts {
                return Err(Error::InvalidParameter(format!(
                    "{} per-concept costs for {concepts} concepts",
                    c.len()
                )));
            }
        }
        if let Some(bad) = self.costs(concepts).into_iter().find(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter(format!("cost must be positive, got {bad}")));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("SVM iterations and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Pooled maps of a batch, one row per sample: shared by every concept, or
/// one matrix per concept when contexts are classwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Maps {
    Shared(Array2<f64>),
    PerConcept(Vec<Array2<f64>>),
}

impl Maps {
    pub fn concept(&self, k: usize) -> ArrayView2<'_, f64> {
        match self {
            Maps::Shared(m) => m.view(),
            Maps::PerConcept(v) => v[k].view(),
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            Maps::Shared(m) => m.nrows(),
            Maps::PerConcept(v) => v.first().map_or(0, |m| m.nrows()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Maps::Shared(m) => m.ncols(),
            Maps::PerConcept(v) => v.first().map_or(0, |m| m.ncols()),
        }
    }

    fn check(&self, labels: &Array2<f64>, concepts: usize) -> Result<()> {
        if labels.dim() != (self.samples(), concepts) {
            return Err(Error::ShapeMismatch(format!(
                "labels {:?} for {} samples and {concepts} concepts",
                labels.dim(),
                self.samples()
            )));
        }
        if let Maps::PerConcept(v) = self {
            if v.len() != concepts {
                return Err(Error::ShapeMismatch(format!(
                    "{} per-concept map sets for {concepts} concepts",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `K x D`, row `k` is `w_k`.
    pub weights: Array2<f64>,
    /// `K x N` dual coefficients, when kept.
    pub duals: Option<Array2<f64>>,
    pub costs: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl SvmModel {
    /// Trains every concept independently (in parallel). `warm` supplies
    /// starting duals from a previous model over the same samples.
    pub fn train(
        maps: &Maps,
        labels: &Array2<f64>,
        config: &SvmConfig,
        warm: Option<&SvmModel>,
    ) -> Result<Self> {
        let concepts = labels.ncols();
        maps.check(labels, concepts)?;
        config.validate(concepts)?;
        let warm_duals = warm.and_then(|m| m.duals.as_ref()).filter(|d| d.dim() == (concepts, maps.samples()));
        let solutions: Vec<DualSolution> = (0..concepts)
            .into_par_iter()
            .map(|k| {
                train_dual(
                    maps.concept(k),
                    labels.column(k),
                    config.cost(k),
                    config,
                    warm_duals.map(|d| d.row(k)),
                )
            })
            .collect::<Result<_>>()?;
        for (k, sol) in solutions.iter().enumerate() {
            if !sol.converged {
                log::warn!(
                    "concept {k}: SVM stopped after {} passes with gap {:.3e}",
                    sol.passes,
                    sol.gap
                );
            }
        }
        let dim = maps.dim();
        let mut weights = Array2::zeros((concepts, dim));
        let mut duals = Array2::zeros((concepts, maps.samples()));
        for (k, sol) in solutions.into_iter().enumerate() {
            weights.row_mut(k).assign(&sol.w);
            duals.row_mut(k).assign(&sol.alpha);
        }
        Ok(Self {
            weights,
            duals: Some(duals),
            costs: config.costs(concepts),
            max_iter: config.max_iter,
            tol: config.tol,
        })
    }

    pub fn concepts(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// `N x K` decision values.
    pub fn scores(&self, maps: &Maps) -> Result<Array2<f64>> {
        if maps.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "maps have dimension {}, model expects {}",
                maps.dim(),
                self.dim()
            )));
        }
        let mut out = Array2::zeros((maps.samples(), self.concepts()));
        for k in 0..self.concepts() {
            out.column_mut(k).assign(&maps.concept(k).dot(&self.weights.row(k)));
        }
        Ok(out)
    }

    /// Drops the duals, e.g. before comparing against a model trained on
    /// another sample set.
    pub fn without_duals(mut self) -> Self {
        self.duals = None;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, d) = self.weights.dim();
        let n = self.duals.as_ref().map_or(0, |a| a.ncols());
        let mut w = ByteWriter::new(MODEL_MAGIC);
        w.usize(k).usize(d).usize(n).usize(self.max_iter).f64(self.tol);
        w.f64s(&self.costs);
        w.f64s(self.weights.iter());
        if let Some(duals) = &self.duals {
            w.f64s(duals.iter());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MODEL_MAGIC, path)?;
        let k = r.count(8)?;
        let d = r.count(0)?;
        let n = r.count(0)?;
        let max_iter = r.u64()? as usize;
        let tol = r.f64()?;
        let costs = r.f64s(k)?;
        let weights = r.f64s(k.checked_mul(d).ok_or_else(|| r.error("size overflow"))?)?;
        let duals = if n > 0 {
            let raw = r.f64s(k.checked_mul(n).ok_or_else(|| r.error("size overflow"))?)?;
            Some(Array2::from_shape_vec((k, n), raw).expect("length read exactly"))
        } else {
            None
        };
        r.finish()?;
        Ok(Self {
            weights: Array2::from_shape_vec((k, d), weights).expect("length read exactly"),
            duals,
            costs,
            max_iter,
            tol,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Multi-class objective `Σ_k ½‖w_k‖² + C_k Σ_p max(0, 1 − Y_kp f_k(p))`.
pub fn hinge_loss(model: &SvmModel, maps: &Maps, labels: &Array2<f64>) -> Result<f64> {
    Ok(concept_objectives(model, maps, labels)?.sum())
}

/// Per-concept terms of [`hinge_loss`].
pub fn concept_objectives(model: &SvmModel, maps: &Maps, labels: &Array2<f64>) -> Result<Array1<f64>> {
    maps.check(labels, model.concepts())?;
    let scores = model.scores(maps)?;
    Ok(Array1::from_shape_fn(model.concepts(), |k| {
        let w = model.weights.row(k);
        let hinge: f64 = scores
            .column(k)
            .iter()
            .zip(labels.column(k))
            .map(|(&f, &y)| (1.0 - y * f).max(0.0))
            .sum();
        0.5 * w.dot(&w) + model.costs[k] * hinge
    }))
}

/// Whether a sample's hinge term is active; the kink counts as active.
fn hinge_active(y: f64, score: f64) -> bool {
    1.0 - y * score >= 0.0
}

/// `∂E/∂φ_p = −Σ_k C_k Y_kp w_k 𝟙[1 − Y_kp w_k·φ_p ≥ 0]` for every sample,
/// with `w` fixed. Shaped like `maps`: per-concept maps get per-concept
/// gradients.
pub fn loss_gradient_wrt_maps(model: &SvmModel, maps: &Maps, labels: &Array2<f64>) -> Result<Maps> {
    maps.check(labels, model.concepts())?;
    let scores = model.scores(maps)?;
    Ok(weighted_map_gradient(model, maps, |k, p| {
        let y = labels[[p, k]];
        if hinge_active(y, scores[[p, k]]) {
            model.costs[k] * y
        } else {
            0.0
        }
    }))
}

/// Per-sample `−Σ_k c(k, p) w_k`, shaped like `maps`.
fn weighted_map_gradient(model: &SvmModel, maps: &Maps, coef: impl Fn(usize, usize) -> f64) -> Maps {
    let (n, d) = (maps.samples(), maps.dim());
    let concept_grad = |k: usize, out: &mut Array2<f64>| {
        let w = model.weights.row(k);
        for (p, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let c = coef(k, p);
            if c != 0.0 {
                row.scaled_add(-c, &w);
            }
        }
    };
    match maps {
        Maps::Shared(_) => {
            let mut g = Array2::zeros((n, d));
            for k in 0..model.concepts() {
                concept_grad(k, &mut g);
            }
            Maps::Shared(g)
        }
        Maps::PerConcept(_) => Maps::PerConcept(
            (0..model.concepts())
                .map(|k| {
                    let mut g = Array2::zeros((n, d));
                    concept_grad(k, &mut g);
                    g
                })
                .collect(),
        ),
    }
}

/// Gradient of the refitted objective `min_w E` w.r.t. the pooled maps:
/// `−Σ_k Y_kp α_kp w_k`. Off the hinge kink the optimal duals are `0` or
/// `C_k`, so this agrees with [`loss_gradient_wrt_maps`]; at the kink the
/// dual picks the subgradient weight. Needs a model with duals.
pub fn dual_gradient_wrt_maps(model: &SvmModel, maps: &Maps, labels: &Array2<f64>) -> Result<Maps> {
    maps.check(labels, model.concepts())?;
    let duals = model
        .duals
        .as_ref()
        .filter(|d| d.dim() == (model.concepts(), maps.samples()))
        .ok_or_else(|| Error::StateMismatch("model has no duals for these samples".into()))?;
    Ok(weighted_map_gradient(model, maps, |k, p| duals[[k, p]] * labels[[p, k]]))
}
