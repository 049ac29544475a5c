use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("gradient output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("layer {layer}: expected input width {expected}, got {actual}")]
    WidthMismatch { layer: usize, expected: usize, actual: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("regression system is singular")]
    Singular,

    #[error("no decoder: the concept encoder is the identity map")]
    NoDecoder,

    #[error("unsupported activation `{0}` for relevance propagation")]
    UnsupportedActivation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse { path: PathBuf, row: usize, column: String, message: String },

    #[error("{path}: {message} at byte offset {offset}")]
    Idx { path: PathBuf, offset: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
