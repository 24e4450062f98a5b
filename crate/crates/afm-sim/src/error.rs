use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Sim {
        line: usize,
        #[source]
        source: afm_core::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration and input errors, 3 when the
    /// simulation itself fails, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Parse { .. } => 2,
            Self::Sim { source, .. } => match source {
                afm_core::Error::InvalidParameter { .. }
                | afm_core::Error::WindowTooLarge { .. }
                | afm_core::Error::NonRectangular
                | afm_core::Error::NonFiniteHeight => 2,
                _ => 3,
            },
            Self::Io { .. } => 1,
        }
    }
}

impl From<afm_core::Error> for HarnessError {
    fn from(e: afm_core::Error) -> Self {
        Self::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
