use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {path} at byte offset {offset}: {reason}")]
    Format { path: PathBuf, offset: u64, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GateError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GateError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GateError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, reason: impl Into<String>) -> Self {
        GateError::Format { path: path.into(), offset, reason: reason.into() }
    }
}
