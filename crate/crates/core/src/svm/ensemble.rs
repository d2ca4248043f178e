//! Ensembles for unbalanced concepts: every member sees all positives plus
//! a random subset of the negatives; the decision score is the mean member
//! score.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::{train_dual, Maps, SvmConfig};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rng;

pub const ENSEMBLE_MAGIC: &[u8; 4] = b"CKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub w: Array1<f64>,
    /// Training-sample indices the member was fit on, ascending.
    pub samples: Vec<usize>,
}

/// Members of one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
}

impl Ensemble {
    pub fn score(&self, phi: ArrayView1<f64>) -> f64 {
        let total: f64 = self.members.iter().map(|m| m.w.dot(&phi)).sum();
        total / self.members.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub seed: u64,
    pub neg_ratio: f64,
    pub concepts: Vec<Ensemble>,
}

impl EnsembleModel {
    /// One ensemble per label column; concept `k` draws from its own random
    /// stream.
    pub fn train(
        maps: &Maps,
        labels: &Array2<f64>,
        members: usize,
        neg_ratio: f64,
        config: &SvmConfig,
        seed: u64,
    ) -> Result<Self> {
        let concepts = labels.ncols();
        config.validate(concepts)?;
        if labels.nrows() != maps.samples() {
            return Err(Error::ShapeMismatch(format!(
                "{} label rows for {} samples",
                labels.nrows(),
                maps.samples()
            )));
        }
        let ensembles = (0..concepts)
            .into_par_iter()
            .map(|k| {
                train_ensemble(
                    maps.concept(k),
                    labels.column(k),
                    members,
                    neg_ratio,
                    config.cost(k),
                    config,
                    seed,
                    k,
                )
                .map_err(|e| match e {
                    Error::NoPositives(None) => Error::NoPositives(Some(format!("concept {k}"))),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            seed,
            neg_ratio,
            concepts: ensembles,
        })
    }

    /// `N x K` mean member scores.
    pub fn scores(&self, maps: &Maps) -> Result<Array2<f64>> {
        let dim = self
            .concepts
            .first()
            .and_then(|e| e.members.first())
            .map_or(0, |m| m.w.len());
        if maps.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "maps have dimension {}, ensemble expects {dim}",
                maps.dim()
            )));
        }
        let mut out = Array2::zeros((maps.samples(), self.concepts.len()));
        for (k, ens) in self.concepts.iter().enumerate() {
            for (p, phi) in maps.concept(k).rows().into_iter().enumerate() {
                out[[p, k]] = ens.score(phi);
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(ENSEMBLE_MAGIC);
        w.u64(self.seed).f64(self.neg_ratio).usize(self.concepts.len());
        for ens in &self.concepts {
            let dim = ens.members.first().map_or(0, |m| m.w.len());
            w.usize(ens.members.len()).usize(dim);
            for m in &ens.members {
                w.usize(m.samples.len());
                for &i in &m.samples {
                    w.usize(i);
                }
                w.f64s(m.w.iter());
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, ENSEMBLE_MAGIC, path)?;
        let seed = r.u64()?;
        let neg_ratio = r.f64()?;
        let k = r.count(16)?;
        let mut concepts = Vec::with_capacity(k);
        for _ in 0..k {
            let count = r.count(8)?;
            let dim = r.count(0)?;
            let mut members = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.count(8)?;
                let samples = (0..len)
                    .map(|_| r.u64().map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?;
                let w = Array1::from(r.f64s(dim)?);
                members.push(EnsembleMember { w, samples });
            }
            concepts.push(Ensemble { members });
        }
        r.finish()?;
        Ok(Self {
            seed,
            neg_ratio,
            concepts,
        })
    }
}

/// Trains `members` SVMs for one concept. Member `m` of concept `concept`
/// uses random stream `(concept, m)` under `seed`, so results do not depend
/// on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn train_ensemble(
    features: ArrayView2<f64>,
    labels: ArrayView1<f64>,
    members: usize,
    neg_ratio: f64,
    cost: f64,
    config: &SvmConfig,
    seed: u64,
    concept: usize,
) -> Result<Ensemble> {
    if members == 0 {
        return Err(Error::InvalidParameter("an ensemble needs at least one member".into()));
    }
    if !(neg_ratio > 0.0 && neg_ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("negative ratio must be positive, got {neg_ratio}")));
    }
    if labels.len() != features.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            features.nrows()
        )));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0.0).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= 0.0).collect();
    if positives.is_empty() {
        return Err(Error::NoPositives(None));
    }
    let mut wanted = (neg_ratio * positives.len() as f64).ceil() as usize;
    if wanted > negatives.len() {
        log::warn!(
            "concept {concept}: wanted {wanted} negatives, only {} available",
            negatives.len()
        );
        wanted = negatives.len();
    }

    let members = (0..members)
        .map(|m| {
            let mut rng = rng::stream(seed, rng::domain::ENSEMBLE, rng::pair(concept as u64, m as u64));
            let picked = rand::seq::index::sample(&mut rng, negatives.len(), wanted);
            let mut samples: Vec<usize> = positives
                .iter()
                .copied()
                .chain(picked.iter().map(|i| negatives[i]))
                .collect();
            samples.sort_unstable();
            let x = features.select(ndarray::Axis(0), &samples);
            let y = labels.select(ndarray::Axis(0), &samples);
            let sol = train_dual(x.view(), y.view(), cost, config, None)?;
            Ok(EnsembleMember { w: sol.w, samples })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

pub fn write_ensemble(path: &Path, model: &EnsembleModel) -> Result<()> {
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<EnsembleModel> {
    EnsembleModel::from_bytes(&read_file(path)?, path)
}
