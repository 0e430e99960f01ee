use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes.
#[derive(Debug, Error)]
pub enum GbrError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("load error in {file}: {reason}")]
    Load { file: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty result: {0}")]
    Empty(String),
}

impl GbrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GbrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(file: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        GbrError::Load {
            file: file.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code class for this error (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            GbrError::Config(_) | GbrError::Invalid(_) => 2,
            GbrError::Io { .. } | GbrError::Load { .. } | GbrError::Dimension(_) => 3,
            GbrError::Numerical(_) => 4,
            GbrError::Empty(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, GbrError>;
