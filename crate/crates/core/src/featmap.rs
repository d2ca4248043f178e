//! Context-free explicit maps applied to every cell before the context
//! layers: identity (linear kernel), the degree-2 tensor product
//! (homogeneous polynomial kernel) and a unary code whose dot products are
//! histogram intersections.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMapKind {
    Linear,
    Poly2,
    /// Histogram intersection via unary codes with `levels` bins per
    /// coordinate over `[0, max_value]`.
    Hi { levels: usize, max_value: f64 },
}

impl InitMapKind {
    pub fn validate(&self) -> Result<()> {
        if let InitMapKind::Hi { levels, max_value } = *self {
            if levels == 0 {
                return Err(Error::InvalidParameter("hi levels must be >= 1".into()));
            }
            if !(max_value > 0.0 && max_value.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "hi max value must be positive, got {max_value}"
                )));
            }
        }
        Ok(())
    }

    /// Dimension of the mapped cell vector for raw dimension `d0`.
    pub fn output_dim(&self, d0: usize) -> usize {
        match *self {
            InitMapKind::Linear => d0,
            InitMapKind::Poly2 => d0 * d0,
            InitMapKind::Hi { levels, .. } => d0 * levels,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitMapKind::Linear => "linear",
            InitMapKind::Poly2 => "poly2",
            InitMapKind::Hi { .. } => "hi",
        }
    }
}

impl fmt::Display for InitMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the tag only; `hi` gets placeholder parameters the caller fills in.
impl FromStr for InitMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(InitMapKind::Linear),
            "poly2" => Ok(InitMapKind::Poly2),
            "hi" => Ok(InitMapKind::Hi {
                levels: 16,
                max_value: 1.0,
            }),
            other => Err(Error::InvalidParameter(format!(
                "unknown initial map `{other}` (expected linear, poly2 or hi)"
            ))),
        }
    }
}

pub fn map_linear(x: ArrayView1<f64>) -> Array1<f64> {
    x.to_owned()
}

/// Flattened outer product `x ⊗ x`, so that `<map(x), map(y)> = (x·y)²`.
pub fn map_poly2(x: ArrayView1<f64>) -> Array1<f64> {
    let d = x.len();
    Array1::from_shape_fn(d * d, |k| x[k / d] * x[k % d])
}

/// Quantization level of one coordinate: `round(v * L / M)` clipped to `[0, L]`.
fn hi_level(value: f64, levels: usize, max_value: f64) -> usize {
    let q = (value * levels as f64 / max_value).round();
    q.clamp(0.0, levels as f64) as usize
}

/// Unary code: coordinate `i` becomes `q_i` ones followed by `L - q_i` zeros.
pub fn map_hi(x: ArrayView1<f64>, levels: usize, max_value: f64) -> Result<Array1<f64>> {
    for (index, &value) in x.iter().enumerate() {
        if value < 0.0 {
            return Err(Error::NegativeInput { index, value });
        }
        if value > max_value {
            return Err(Error::OutOfRange {
                index,
                value,
                max: max_value,
            });
        }
    }
    Ok(unary_code(x, levels, max_value))
}

fn unary_code(x: ArrayView1<f64>, levels: usize, max_value: f64) -> Array1<f64> {
    let mut out = Array1::zeros(x.len() * levels);
    for (i, &value) in x.iter().enumerate() {
        let q = hi_level(value, levels, max_value);
        out.slice_mut(ndarray::s![i * levels..i * levels + q]).fill(1.0);
    }
    out
}

/// How out-of-range histogram values are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangePolicy {
    /// Reject negative values and values above the maximum.
    Strict,
    /// Reject negative values; saturate values above the maximum.
    ClipAbove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitMapConfig {
    pub kind: InitMapKind,
    /// Scale every cell to unit ℓ2 norm before mapping.
    pub l2_normalize: bool,
    pub range: RangePolicy,
}

impl InitMapConfig {
    pub fn new(kind: InitMapKind) -> Self {
        Self {
            kind,
            l2_normalize: false,
            range: RangePolicy::Strict,
        }
    }
}

/// Maps every cell column of a `d0 x n` feature matrix.
pub fn map_cells(features: &Array2<f64>, config: &InitMapConfig) -> Result<Array2<f64>> {
    config.kind.validate()?;
    let (d0, n) = features.dim();
    let out_dim = config.kind.output_dim(d0);
    let mut out = Array2::zeros((out_dim, n));
    for (j, column) in features.axis_iter(Axis(1)).enumerate() {
        let mut cell = column.to_owned();
        if config.l2_normalize {
            let norm = cell.dot(&cell).sqrt();
            if norm > 0.0 {
                cell /= norm;
            }
        }
        let mapped = match config.kind {
            InitMapKind::Linear => map_linear(cell.view()),
            InitMapKind::Poly2 => map_poly2(cell.view()),
            InitMapKind::Hi { levels, max_value } => match config.range {
                RangePolicy::Strict => map_hi(cell.view(), levels, max_value)?,
                RangePolicy::ClipAbove => {
                    if let Some((index, &value)) =
                        cell.iter().enumerate().find(|(_, &v)| v < 0.0)
                    {
                        return Err(Error::NegativeInput { index, value });
                    }
                    unary_code(cell.view(), levels, max_value)
                }
            },
        };
        out.column_mut(j).assign(&mapped);
    }
    Ok(out)
}

/// Initial maps for a batch of images, computed in parallel.
pub fn init_maps<'a, I>(features: I, config: &InitMapConfig) -> Result<Vec<Array2<f64>>>
where
    I: IntoParallelIterator<Item = &'a Array2<f64>>,
    I::Iter: IndexedParallelIterator,
{
    features
        .into_par_iter()
        .map(|f| map_cells(f, config))
        .collect()
}
