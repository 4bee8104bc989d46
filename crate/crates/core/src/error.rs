use std::io;

use thiserror::Error;

/// Errors produced by the feature, model, training and evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sequence of {len} frames exceeds the maximum of {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("numerical error in `{tensor}`: {detail}")]
    Numerical { tensor: String, detail: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
