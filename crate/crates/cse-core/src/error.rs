//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tile straddles the hypothesis boundary on axis {axis} at {threshold}")]
    StraddlingTile { axis: usize, threshold: f64 },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("dimension {dim} exceeds the vertex enumeration limit of {limit}")]
    TooManyAxes { dim: usize, limit: usize },

    #[error("design incompatible with model: {0}")]
    DesignMismatch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
