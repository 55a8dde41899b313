use ecvit_core::Error as CoreError;
use thiserror::Error;

/// Failures mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{phase}: {source}")]
    Core {
        phase: String,
        #[source]
        source: CoreError,
    },
    #[error("{0}")]
    Io(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Core { source, .. } => match source {
                CoreError::Numeric { .. } => 3,
                CoreError::Contract(_) => 1,
                CoreError::Shape { .. } | CoreError::Format(_) | CoreError::Version { .. } | CoreError::Io(_) => 2,
            },
            CliError::Oracle(_) => 4,
        }
    }
}

/// Tags core errors with the phase that raised them.
pub trait Phase<T> {
    fn phase(self, name: &str) -> Result<T, CliError>;
}

impl<T> Phase<T> for Result<T, CoreError> {
    fn phase(self, name: &str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { phase: name.to_string(), source })
    }
}

impl<T> Phase<T> for std::io::Result<T> {
    fn phase(self, name: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Io(format!("{name}: {e}")))
    }
}
