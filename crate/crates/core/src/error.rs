use thiserror::Error;

/// Errors produced by the transform library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied inconsistent shapes, alphabets or parameters.
    #[error("usage error: {0}")]
    Usage(String),

    /// The operation is undefined for this input (e.g. the phase of zero).
    #[error("domain error: {0}")]
    Domain(String),

    /// An oracle failed to produce a value.
    #[error("oracle error at index {index}: {message}")]
    Oracle { index: String, message: String },

    /// Malformed text input.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Requested work exceeds a configured budget.
    #[error("resource limit: {0}")]
    Resource(String),

    /// A construction failed its own validation.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Internal invariant violated; indicates a bug.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
