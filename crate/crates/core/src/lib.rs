//! Deep context-aware kernel networks over grids of image cells.
//!
//! Images are `W x H` grids of cell feature vectors. A fixed explicit map
//! turns every cell into `Φ^(0)`; context layers then mix each cell with
//! its typed neighbors through learnable matrices, and the final cell maps
//! are pooled into one vector per image and classified by linear SVMs.
//! Training alternates between fitting the SVMs and a gradient step on the
//! context matrices.

mod binio;
pub mod context;
pub mod dataset;
pub mod error;
pub mod featmap;
pub mod grid;
pub mod metrics;
pub mod rng;
pub mod svm;
pub mod synthetic;
pub mod trainer;

pub use context::{ContextGrad, ContextParams, ContextStack, Pooling, Sharing, Variant};
pub use dataset::{load_dataset, Dataset, ImageSample, Split};
pub use error::{Error, Result};
pub use featmap::{InitMapConfig, InitMapKind, RangePolicy};
pub use grid::{Direction, GridSpec, NeighborhoodSystem};
pub use svm::{Maps, SvmConfig, SvmModel};
pub use trainer::{TrainConfig, TrainState, TrainingSet};
