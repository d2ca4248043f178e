//! Generated datasets whose classes differ only in spatial arrangement.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Dataset, ImageSample, Split};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrangementTask {
    pub width: usize,
    pub height: usize,
    pub d0: usize,
    pub images: usize,
    /// The first `train` images form the training split.
    pub train: usize,
    pub seed: u64,
}

impl Default for ArrangementTask {
    fn default() -> Self {
        Self {
            width: 3,
            height: 3,
            d0: 8,
            images: 200,
            train: 100,
            seed: 0,
        }
    }
}

/// Every image holds the same multiset of cell vectors: two markers `a`
/// and `b` side by side in a random row, the remaining vectors shuffled
/// into the other cells. Class `A` puts `a` left of `b`, class `B` the
/// reverse. Classes alternate with the image index; labels are one-hot over
/// the two classes. Needs a grid at least two cells wide.
pub fn arrangement_dataset(task: &ArrangementTask) -> Result<Dataset> {
    let grid = GridSpec::new(task.width, task.height)?;
    if task.width < 2 {
        return Err(crate::Error::InvalidParameter("the arrangement task needs width >= 2".into()));
    }
    let n = grid.cells();
    let mut content = rng::stream(task.seed, rng::domain::SYNTHETIC, 0);
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..task.d0).map(|_| content.random::<f64>()).collect())
        .collect();

    let mut dataset = Dataset::new(grid, task.d0, vec!["A".into(), "B".into()]);
    for i in 0..task.images {
        let mut rng = rng::stream(task.seed, rng::domain::SYNTHETIC, 1 + i as u64);
        let class_a = i % 2 == 0;
        let row = rng.random_range(0..task.height);
        let col = rng.random_range(0..task.width - 1);
        let left = grid.index(row, col);
        let right = grid.index(row, col + 1);
        let mut distractors: Vec<usize> = (2..n).collect();
        distractors.shuffle(&mut rng);
        let mut placement = vec![0usize; n];
        let (l, r) = if class_a { (0, 1) } else { (1, 0) };
        placement[left] = l;
        placement[right] = r;
        let mut rest = distractors.into_iter();
        for (cell, slot) in placement.iter_mut().enumerate() {
            if cell != left && cell != right {
                *slot = rest.next().expect("one distractor per free cell");
            }
        }
        let features = Array2::from_shape_fn((task.d0, n), |(d, cell)| vectors[placement[cell]][d]);
        dataset.push(ImageSample {
            id: format!("img{i:04}"),
            split: if i < task.train { Split::Train } else { Split::Test },
            features,
            labels: if class_a { vec![1, -1] } else { vec![-1, 1] },
        })?;
    }
    Ok(dataset)
}
