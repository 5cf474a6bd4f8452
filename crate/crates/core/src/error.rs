use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A geometric precondition was violated, which points to a
    /// bookkeeping bug in the caller.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Annotation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("episode ended at frame {frame_index}")]
    EpisodeEnd { frame_index: usize },

    #[error("controller failed at frame {frame_index}: {source}")]
    Controller {
        frame_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("batch size {batch_size} exceeds dataset size {dataset_size}")]
    BatchTooLarge {
        batch_size: usize,
        dataset_size: usize,
    },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
