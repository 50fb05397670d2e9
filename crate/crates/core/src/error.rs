use thiserror::Error;

/// Errors raised by the core numerical, training and data routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode index {mode} out of range for rank {rank}")]
    ModeIndex { mode: usize, rank: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid dims: {0}")]
    Dims(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
