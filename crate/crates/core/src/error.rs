use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing weights: {0}")]
    MissingWeights(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite loss at step {step} (batch indices {batch:?})")]
    NonFinite { step: usize, batch: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
