use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroVector { norm: f64 },

    #[error("invalid dimension {dim}: need at least 2")]
    InvalidDimension { dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("row {row} has norm {norm} (deviation from 1 exceeds {tol:e})")]
    NormViolation { row: usize, norm: f64, tol: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("need at least two points, got {got}")]
    NeedTwoPoints { got: usize },

    #[error("need at least two pairs, got {got}")]
    NeedTwoPairs { got: usize },

    #[error("class {label} has fewer than two points")]
    SingletonClass { label: i64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("series did not converge within {terms} terms")]
    NonConvergence { terms: usize },

    #[error("line search stalled at step {step:e}")]
    LineSearchStall { step: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative pool is empty")]
    EmptyPool,

    #[error("enumeration of {count} assignments exceeds the cap of {cap}")]
    TooLarge { count: u128, cap: u128 },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
