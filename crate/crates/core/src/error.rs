use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the SAMDP pipeline.
#[derive(Debug, Error)]
pub enum SamdpError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: expected format `{expected}`, found `{found}`")]
    FormatMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("missing input {0}")]
    MissingInput(PathBuf),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SamdpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SamdpError::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            SamdpError::MissingInput(path)
        } else {
            SamdpError::Io { path, source }
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            SamdpError::Config(_) => 2,
            SamdpError::MissingInput(_) => 3,
            SamdpError::FormatMismatch { .. } | SamdpError::Parse { .. } => 4,
            SamdpError::Numerical(_) => 5,
            SamdpError::Invalid(_) | SamdpError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SamdpError>;
