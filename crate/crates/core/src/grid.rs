//! Cell lattices and their typed neighborhood systems.
//!
//! Cells are indexed row-major: cell `i` sits at `(i / W, i % W)`. A
//! neighborhood system holds one boolean adjacency mask per relative
//! position, always in the order above, below, left, right.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    width: usize,
    height: usize,
}

impl GridSpec {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of cells, `W * H`.
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// `(row, col)` of a row-major cell index.
    pub fn position(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// Relative position of a neighboring cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Above,
    Below,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Above,
        Direction::Below,
        Direction::Left,
        Direction::Right,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Above => Direction::Below,
            Direction::Below => Direction::Above,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Above => "above",
            Direction::Below => "below",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    /// Whether `to` lies in this direction from `from`, at most `radius`
    /// steps away along one axis and aligned on the other.
    fn relates(self, from: (usize, usize), to: (usize, usize), radius: usize) -> bool {
        let (fr, fc) = from;
        let (tr, tc) = to;
        match self {
            Direction::Above => fc == tc && tr < fr && fr - tr <= radius,
            Direction::Below => fc == tc && tr > fr && tr - fr <= radius,
            Direction::Left => fr == tr && tc < fc && fc - tc <= radius,
            Direction::Right => fr == tr && tc > fc && tc - fc <= radius,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown direction `{s}`")))
    }
}

/// Typed, radius-bounded adjacency over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSystem {
    grid: GridSpec,
    radius: usize,
    masks: Vec<Array2<bool>>,
}

impl NeighborhoodSystem {
    /// Builds the four axis-aligned masks. `masks[c][[x, y]]` is true iff
    /// cell `y` lies in direction `c` of cell `x`.
    pub fn build(grid: GridSpec, radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidParameter("radius must be at least 1".into()));
        }
        let n = grid.cells();
        let masks = Direction::ALL
            .iter()
            .map(|&dir| {
                Array2::from_shape_fn((n, n), |(x, y)| {
                    dir.relates(grid.position(x), grid.position(y), radius)
                })
            })
            .collect();
        Ok(Self {
            grid,
            radius,
            masks,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of relation types `C`.
    pub fn directions(&self) -> usize {
        self.masks.len()
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    pub fn mask(&self, direction: usize) -> &Array2<bool> {
        &self.masks[direction]
    }

    pub fn masks(&self) -> &[Array2<bool>] {
        &self.masks
    }

    /// Cells lying in `direction` of `cell`.
    pub fn neighbors(&self, direction: usize, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.masks[direction]
            .row(cell)
            .into_iter()
            .enumerate()
            .filter_map(|(y, &on)| on.then_some(y))
    }

    /// Total number of true entries across all masks.
    pub fn support_size(&self) -> usize {
        self.masks
            .iter()
            .map(|m| m.iter().filter(|&&on| on).count())
            .sum()
    }

    /// Handcrafted context: each row of each mask divided by its number of
    /// neighbors in that direction. Rows without neighbors stay zero.
    pub fn normalized_context(&self) -> Vec<Array2<f64>> {
        self.masks
            .iter()
            .map(|mask| {
                let mut p = mask.mapv(|on| if on { 1.0 } else { 0.0 });
                for mut row in p.rows_mut() {
                    let total: f64 = row.sum();
                    if total > 0.0 {
                        row.mapv_inplace(|v| v / total);
                    }
                }
                p
            })
            .collect()
    }
}
