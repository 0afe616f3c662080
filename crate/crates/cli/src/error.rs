use fedaug_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 3,
            CliError::Io { .. } => 7,
            CliError::Core(e) => match e {
                CoreError::Config { .. } => 3,
                CoreError::InfeasibleBudget { .. } => 4,
                CoreError::InfeasibleBandwidth { .. } => 5,
                CoreError::NoFeasibleRegion(_) => 6,
                CoreError::Io(_) => 7,
                CoreError::DeviceInfeasible { .. } => 8,
                _ => 1,
            },
        }
    }
}
