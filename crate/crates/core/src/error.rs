use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Parse { path: PathBuf, row: u64, column: usize, message: String },

    #[error("{}: row {row} has {found} cells, expected {expected}", path.display())]
    RaggedRow { path: PathBuf, row: u64, found: usize, expected: usize },

    #[error("dataset is empty")]
    Empty,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dataset is not norm-bounded (max row norm {max_norm}); normalize it first")]
    NotNormBounded { max_norm: f64 },

    #[error("training did not converge after {iterations} iterations (residual norm {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("unknown method `{0}` (expected mdg, input_perturb or output_perturb)")]
    UnknownMethod(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
