use thiserror::Error;

/// Errors shared by the factorization kernels, drivers, and model evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix must have rows >= cols (got {rows}x{cols})")]
    Underdetermined { rows: usize, cols: usize },

    #[error("fast memory capacity exceeded: need {needed} words, capacity {capacity}")]
    CapacityExceeded { needed: usize, capacity: usize },

    #[error("layout constraint violated: {0}")]
    LayoutConstraint(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix too rectangular: need sorted r >= sqrt(864*n*m/P)")]
    TooRectangular,

    #[error("block {index} is not upper triangular")]
    NotTriangular { index: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
