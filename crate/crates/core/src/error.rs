use std::io;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("format error: {0}")]
    FormatError(String),
    #[error("state error: {0}")]
    StateError(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by configuration rather than by input data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_) | Error::InvalidShape(_) | Error::InvalidGeometry(_))
    }
}
