use alloc::string::String;

/// Errors raised by the pure toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no valid depth")]
    NoValidDepth,
    #[error("non-square image {height}x{width}")]
    NonSquare { height: usize, width: usize },
    #[error("predictions are not normalized (row {row} sums to {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("degenerate zero feature")]
    DegenerateFeature,
    #[error("degenerate saliency")]
    DegenerateSaliency,
    #[error("conflicting method flags: {0}")]
    ConflictingMethod(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("unlabeled sample {0}")]
    Unlabeled(String),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}; batch ids: {ids:?}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        ids: alloc::vec::Vec<String>,
    },
    #[error("incompatible parameters: {0}")]
    Incompatible(String),
}

pub type Result<T> = core::result::Result<T, Error>;
