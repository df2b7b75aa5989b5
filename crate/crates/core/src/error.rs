//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("unsupported MHD header: {0}")]
    UnsupportedMhd(String),

    #[error("raw data size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("volume dims mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),

    #[error("value out of range for uint8 output: {0}")]
    Uint8Range(f32),

    #[error("skeleton is empty")]
    EmptySkeleton,

    #[error("cycle detected in the component containing the root; tree assumption violated")]
    CycleDetected,

    #[error("graph does not match the label volume: {0}")]
    GraphLabelMismatch(String),

    #[error("weighted selection impossible: all candidate weights are zero")]
    AllZeroWeights,

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("degenerate test: paired differences have zero variance")]
    DegenerateTest,

    #[error("ground-truth centerline is empty")]
    EmptyCenterline,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("phantom tree does not fit in the volume after {0} attempts")]
    PhantomFit(usize),

    #[error("checkpoint file is corrupt: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Data(String),
}
