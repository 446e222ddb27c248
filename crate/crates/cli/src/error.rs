//! Failure classification for the harness, mapped onto the process exit
//! codes: 0 success, 2 configuration, 3 engine or I/O, 4 validation.

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("engine error: {0}")]
    Engine(#[from] squeezelab_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("validation failed: {failed} of {total} checks")]
    Validation { failed: usize, total: usize },
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Engine(_) | HarnessError::Io { .. } => 3,
            HarnessError::Validation { .. } => 4,
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
