//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Structural misuse: shape mismatches, incompatible segment tables,
    /// invalid network descriptions.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called before its required state existed,
    /// e.g. eval-mode forward without recomputed batch-norm statistics.
    #[error("state error: {0}")]
    State(String),

    /// Invalid argument values: out-of-domain coordinates, empty datasets,
    /// malformed probability rows.
    #[error("input error: {0}")]
    Input(String),

    /// Numerical failure: non-finite intermediates, zero-norm vectors.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training aborted on a non-finite loss; carries the step and the
    /// sampled coordinate for diagnosis.
    #[error("non-finite loss at step {step} (coord {coord})")]
    NonFiniteLoss { step: usize, coord: String },

    /// Byte-format violations when parsing external files (IDX, checkpoints).
    #[error("format error at offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("config file error: {0}")]
    ConfigFile(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
