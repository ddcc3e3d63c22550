use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty store: {0}")]
    EmptyStore(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("training failed at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error at {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
