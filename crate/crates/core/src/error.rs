use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid weight graph: {0}")]
    InvalidWeights(String),

    #[error("solver diverged at iteration {iteration}{}", .lambda2.map(|l| format!(" (lambda2 = {l})")).unwrap_or_default())]
    Divergence { iteration: usize, lambda2: Option<f64> },

    #[error("dendrogram has {merges} merges, cutting into {groups} clusters needs {needed}")]
    IncompleteTree { merges: usize, groups: usize, needed: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }
}
