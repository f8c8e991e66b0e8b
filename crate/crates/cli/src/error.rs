use std::path::PathBuf;

use sparsect_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything a caller could have caught by checking inputs, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_RUNTIME,
            CliError::Core { source, .. } => match source {
                CoreError::UnitMismatch { .. }
                | CoreError::DegenerateRange { .. }
                | CoreError::Shape(_)
                | CoreError::Empty(_)
                | CoreError::IndexOutOfRange { .. }
                | CoreError::InvalidParameter(_)
                | CoreError::StructureMismatch(_) => EXIT_VALIDATION,
                CoreError::ProjectionDomain { .. }
                | CoreError::Numerical(_)
                | CoreError::Format { .. }
                | CoreError::Io(_) => EXIT_RUNTIME,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches a short context string to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T>;
}

impl<T> Context<T> for sparsect_core::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
