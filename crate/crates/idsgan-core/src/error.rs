//! Error types shared across the workspace.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Caller violated an API precondition (bad argument, missing stage, ...).
    #[error("invalid usage: {0}")]
    Usage(String),

    /// A numeric value fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input data.
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<u64>,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Checkpoint could not be read back (corruption, version skew).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a pipeline stage name to an error.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 1,
            Error::Shape(_)
            | Error::Domain(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Checkpoint(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
