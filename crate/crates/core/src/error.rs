use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (qubit count, subset size, overrides, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or vector dimensions do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Wire or class index out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A parameterized gate the gradient engines cannot differentiate.
    #[error("unsupported gate: {0}")]
    UnsupportedGate(String),

    /// Malformed binary container; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Batch statistics are undefined for the given batch.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// A gradient or loss stopped being finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Checkpoint cannot be loaded into the requested model.
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
