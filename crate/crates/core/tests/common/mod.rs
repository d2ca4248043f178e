#![allow(dead_code)]

use ctxkernel::context::{ContextParams, ContextStack, Sharing};
use ctxkernel::grid::{GridSpec, NeighborhoodSystem};
use ctxkernel::svm::{Maps, SvmConfig, SvmModel};
use ctxkernel::trainer::{pooled_maps, TrainingSet};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hood(w: usize, h: usize, r: usize) -> NeighborhoodSystem {
    NeighborhoodSystem::build(GridSpec::new(w, h).unwrap(), r).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Random grid with at most `max_cells` cells.
pub fn random_grid(rng: &mut ChaCha8Rng, max_cells: usize) -> (usize, usize) {
    loop {
        let w = rng.random_range(1..=max_cells);
        let h = rng.random_range(1..=max_cells);
        if w * h <= max_cells && w * h >= 2 {
            return (w, h);
        }
    }
}

/// Random weights on the support of every direction, per layer.
pub fn random_stack(rng: &mut ChaCha8Rng, support: &NeighborhoodSystem, depth: usize) -> ContextStack {
    let n = support.cells();
    let layers = (0..depth)
        .map(|_| {
            support
                .masks()
                .iter()
                .map(|mask| Array2::from_shape_fn((n, n), |(x, y)| if mask[[x, y]] { rng.random_range(-1.0..1.0) } else { 0.0 }))
                .collect()
        })
        .collect();
    ContextStack::new(layers)
}

/// A stack whose layers all hold the same random weights.
pub fn random_stationary_stack(rng: &mut ChaCha8Rng, support: &NeighborhoodSystem, depth: usize) -> ContextStack {
    let one = random_stack(rng, support, 1);
    ContextStack::replicated(one.layer(0), depth)
}

pub fn random_params(
    rng: &mut ChaCha8Rng,
    support: &NeighborhoodSystem,
    depth: usize,
    sharing: Sharing,
    classes: Option<usize>,
    gamma: f64,
) -> ContextParams {
    let make = |rng: &mut ChaCha8Rng| match sharing {
        Sharing::Layerwise => random_stack(rng, support, depth),
        Sharing::Stationary => random_stationary_stack(rng, support, depth),
    };
    let stacks = match classes {
        Some(k) => (0..k).map(|_| make(rng)).collect(),
        None => vec![make(rng)],
    };
    ContextParams::from_stacks(support.clone(), sharing, classes.is_some(), gamma, stacks).unwrap()
}

/// `images` random initial maps with ±1 labels over `k` concepts; every
/// concept gets both signs.
pub fn random_training_set(rng: &mut ChaCha8Rng, grid: GridSpec, d0: usize, images: usize, k: usize) -> TrainingSet {
    let initial = (0..images).map(|_| uniform(rng, d0, grid.cells(), -1.0, 1.0)).collect();
    let labels = Array2::from_shape_fn((images, k), |(p, c)| {
        if p == c % images {
            1.0
        } else if p == (c + 1) % images {
            -1.0
        } else if rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    });
    TrainingSet { grid, initial, labels }
}

pub fn fit(params: &ContextParams, data: &TrainingSet) -> (Maps, SvmModel) {
    let (maps, _) = pooled_maps(params, &data.initial).unwrap();
    let model = SvmModel::train(&maps, &data.labels, &SvmConfig::default(), None).unwrap();
    (maps, model)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    mat.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}
