use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum TandemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("enumeration too large: {size} states exceeds cap {cap}")]
    Infeasible { size: u128, cap: u128 },
    #[error("malformed posterior table: {0}")]
    Structural(String),
    #[error("indeterminate sentinel arithmetic (inf - inf) at t={t}")]
    IndeterminateSentinel { t: usize },
    #[error("observation has zero probability under both classes")]
    ImpossibleObservation,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("both classes must be present")]
    SingleClass,
    #[error("activation cache does not match the current parameters")]
    StaleCache,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TandemError>;

pub(crate) fn invalid(msg: impl Into<String>) -> TandemError {
    TandemError::InvalidArgument(msg.into())
}
