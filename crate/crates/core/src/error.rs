use thiserror::Error;

/// Errors raised across the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a transform or distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor, matrix or dataset shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced a non-finite value or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid configuration value or key.
    #[error("config error: {0}")]
    Config(String),

    /// Data are too degenerate to fit (zero variance, too few points).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
