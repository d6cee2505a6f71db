use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid block structure: {0}")]
    InvalidStructure(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("unsupported exponents ({p}, {q}); only 1, 2 and inf are allowed here")]
    UnsupportedExponents { p: String, q: String },

    #[error("zero vector has no extremal dual vector")]
    ZeroVector,

    #[error("coordinate index {index} out of range 1..={dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("subspace is trivial (dimension 0)")]
    TrivialSubspace,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("balance solver failed: {0}")]
    SolverFailure(String),

    #[error("vertex enumeration would produce {count} vertices (limit {limit})")]
    VertexOverflow { count: f64, limit: usize },

    #[error("subspace dimension {dim} too small for the first step (need at least {needed})")]
    DimensionTooSmall { dim: usize, needed: f64 },

    #[error("trace does not match the subspace or structure: {0}")]
    TraceMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
