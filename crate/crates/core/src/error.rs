use thiserror::Error;

/// Errors raised by the sketching library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("SVD did not converge")]
    SvdNotConverged,

    #[error("matrix is numerically rank deficient: rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("dense size guard exceeded: {requested} entries > {limit}")]
    SizeGuard { requested: usize, limit: usize },

    #[error("non-finite entry encountered")]
    NonFinite,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl Into<String>, found: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        found: found.into(),
    }
}
