use thiserror::Error;

use crate::fit::FitTrace;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("exponent {exponent} is outside the representable weight range (|e| <= 700)")]
    NumericRange { exponent: f64 },

    #[error("non-finite value at row {row}: {message}")]
    NonFinite { row: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("support violation at alphabet index {index}, class {class}: target mass with zero source mass")]
    SupportViolation { index: usize, class: u8 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("source domain is empty: no auction in the stream was won")]
    EmptySource,

    #[error("optimization diverged: {message}")]
    Divergence {
        message: String,
        trace: Option<Box<FitTrace>>,
    },

    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
