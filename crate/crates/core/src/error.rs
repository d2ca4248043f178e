use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across ingestion, mapping, training and serialization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: expected a {expected_rows}x{expected_cols} matrix, found {rows}x{cols}", path.display())]
    DimensionMismatch {
        path: PathBuf,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{context}: label vector has {found} entries, expected {expected}")]
    LabelArity {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("{context}: {message}")]
    BadValue { context: String, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: malformed file: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("negative input {value} at coordinate {index}")]
    NegativeInput { index: usize, value: f64 },

    #[error("input {value} at coordinate {index} exceeds the maximum {max}")]
    OutOfRange { index: usize, value: f64, max: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state mismatch: {0}")]
    StateMismatch(String),

    #[error("all labels belong to a single class")]
    SingleClass,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no positive samples{}", .0.as_ref().map(|c| format!(" for {c}")).unwrap_or_default())]
    NoPositives(Option<String>),

    #[error("training diverged at alternation {alternation}: objective {objective} exceeds 10x the initial {initial}")]
    DivergenceDetected {
        alternation: usize,
        objective: f64,
        initial: f64,
    },

    #[error("checkpoint does not match the dataset: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::DivergenceDetected { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
