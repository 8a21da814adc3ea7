use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: failed to decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}: unsupported image format: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("{path}: failed to encode image: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pixel value {value} at index {index} outside [0, 255]")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("crop box {0} does not intersect the image")]
    EmptyIntersection(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("undetermined: {0}")]
    Undetermined(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or arguments rather than by the
    /// environment (I/O, encoders).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Encode { .. })
    }
}
