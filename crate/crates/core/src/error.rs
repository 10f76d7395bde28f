//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an op's expectation) disagree on shape.
    /// `op` names the primitive or operation that rejected the input.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An exported operation produced NaN or Inf.
    #[error("non-finite values produced by `{op}`")]
    NonFinite { op: &'static str },

    /// A gradient handed to an optimizer or attack step contained NaN/Inf.
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    /// A precondition on an argument failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The computation under a gradient check returned different values on
    /// two identical evaluations, so finite differences are meaningless.
    #[error("non-deterministic computation detected during gradient check")]
    NonDeterministic,

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("dataset line {line}: {msg}")]
    Dataset { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Error {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Error {
        Error::InvalidArgument(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
