use std::path::PathBuf;

use thiserror::Error;

use crate::ClientId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `key` is the dotted config key (or a parameter
    /// name for library calls).
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure on client {client}{}: {message}", batch.map(|b| format!(" at batch {b}")).unwrap_or_default())]
    Numeric {
        client: ClientId,
        batch: Option<usize>,
        message: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("failed to ingest {}: {message}", path.display())]
    Ingestion { path: PathBuf, message: String },

    #[error("partition error: class {class} in domain {domain} is short by {shortfall} samples")]
    Partition {
        class: usize,
        domain: usize,
        shortfall: usize,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for a CLI run failing with this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            _ => 1,
        }
    }
}
