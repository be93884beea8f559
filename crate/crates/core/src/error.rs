//! Error type shared across the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model, window or experiment configuration.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Width or index mismatch between tensors.
    #[error("shape error: {0}")]
    Shape(String),

    /// An intervention references positions or layers that do not exist.
    #[error("intervention error: {0}")]
    Intervention(String),

    /// Caller-supplied data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// Not enough tokens left to satisfy a sampling request.
    #[error("capacity error: requested {requested} tokens but only {available} are available")]
    Capacity { requested: usize, available: usize },

    /// Malformed activation dump.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Accuracy drop is undefined when the baseline accuracy is zero.
    #[error("undefined baseline: baseline accuracy is zero")]
    UndefinedBaseline,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name, used by the CLI for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Shape(_) => "shape",
            Error::Intervention(_) => "intervention",
            Error::Input(_) => "input",
            Error::Capacity { .. } => "capacity",
            Error::Format { .. } => "format",
            Error::UndefinedBaseline => "undefined-baseline",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
