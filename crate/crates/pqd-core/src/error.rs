use thiserror::Error;

/// Errors produced by schedules, samplers, quantizers and calibration.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or argument value.
    #[error("config: {0}")]
    Config(String),

    /// Tensor/batch shape mismatch.
    #[error("shape: {0}")]
    Shape(String),

    /// Non-finite values or numerical divergence.
    #[error("numerical: {0}")]
    Numerical(String),

    /// Malformed or unrecognized file contents.
    #[error("format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
