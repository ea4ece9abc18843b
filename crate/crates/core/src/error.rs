use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, bad index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed {what} in {path} at byte {offset}: {msg}")]
    Ingest {
        what: &'static str,
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("invalid model{}: {msg}", .layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    Model { layer: Option<usize>, msg: String },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn model(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Model { layer, msg: msg.into() }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
