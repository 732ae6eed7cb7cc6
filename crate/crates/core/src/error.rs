use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error{}: {msg}", model.map(|m| format!(" (model {m})")).unwrap_or_default())]
    Training { model: Option<usize>, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn training(msg: impl Into<String>) -> Self {
        Error::Training {
            model: None,
            msg: msg.into(),
        }
    }

    /// Tags a training error with the ensemble member that produced it.
    pub(crate) fn for_model(self, index: usize) -> Self {
        match self {
            Error::Training { msg, .. } => Error::Training {
                model: Some(index),
                msg,
            },
            other => other,
        }
    }
}
