//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, training, curvature fitting,
/// and bound evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejected input: a dimension, range, or emptiness precondition failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A loss kind was applied to an incompatible output head or target.
    #[error("incompatible loss: {0}")]
    IncompatibleLoss(String),

    /// Gradient of a non-differentiable loss was requested.
    #[error("non-differentiable loss: {0}")]
    NonDifferentiable(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    /// A bound's admissibility constraint was violated.
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    /// The dataset lacks a field the operation requires.
    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    /// The operation does not support the requested setting.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed persisted model or posterior file.
    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
