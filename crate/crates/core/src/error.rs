use thiserror::Error;

/// Errors raised by the evaluation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Format(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined correlation (zero variance)")]
    ZeroVariance,

    #[error("undefined spherical path{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    UndefinedSphericalPath { row: Option<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
