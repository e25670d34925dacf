use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: {rejected} of {total} rows malformed (limit 1%); first: {first}")]
    TooManyMalformed {
        path: PathBuf,
        rejected: usize,
        total: usize,
        first: String,
    },

    #[error("duplicate zip code {0}")]
    DuplicateZip(String),

    #[error("missing tile z={z} x={x} y={y} (offline mode)")]
    MissingTile { z: u32, x: u32, y: u32 },

    #[error("tile download failed for {url}: {message}")]
    Download { url: String, message: String },

    #[error("image error: {0}")]
    Image(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dataset container: {0}")]
    Container(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad input or configuration, as opposed to
    /// runtime failures (network, disk, numerics).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Csv { .. }
                | Error::TooManyMalformed { .. }
                | Error::DuplicateZip(_)
                | Error::Shape(_)
                | Error::Json(_)
        )
    }
}
