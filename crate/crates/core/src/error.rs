use thiserror::Error;

use crate::linear_forms::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a prime >= 3")]
    NotPrime(u64),

    #[error("group Z_{p}^{d} x Z_{p} is too large for this platform")]
    GroupTooLarge { p: u64, d: u32 },

    #[error("functions live on different groups")]
    SpecMismatch,

    #[error("shift {0} appears more than once")]
    DuplicateShift(i64),

    #[error("invalid linear form: {0}")]
    InvalidForm(String),

    #[error("form family rejected: {0}")]
    Family(Violation),

    #[error("integer overflow while evaluating {0}")]
    Overflow(String),

    #[error("expected {expected} functions, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("invalid window: {0}")]
    Window(String),

    #[error("instance exceeds enumeration cap: {0}")]
    TooLarge(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
