use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum KMeansError {
    /// A caller broke an operation's precondition (shape mismatch, bad index, unsorted input).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An allocation was refused, either by the allocator or by a configured memory limit.
    #[error("out of memory: {0}")]
    Resource(String),
    /// A dataset or assignment file is malformed.
    #[error("data format error in field `{field}`: {message}")]
    Format { field: &'static str, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A streamed chunk could not be ingested.
    #[error("ingestion of chunk {chunk} failed: {source}")]
    Ingest {
        chunk: usize,
        #[source]
        source: Box<KMeansError>,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl KMeansError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        KMeansError::Contract(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KMeansError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(field: &'static str, msg: impl Into<String>) -> Self {
        KMeansError::Format {
            field,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KMeansError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, KMeansError>;
