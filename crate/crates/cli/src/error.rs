use thiserror::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad inputs or configuration (exit code 2).
    #[error("validation failed: {0}")]
    Validation(String),
    /// A numerical routine gave up (exit code 3).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Reading or writing files failed (exit code 4).
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<lstd_ac::Error> for CliError {
    fn from(e: lstd_ac::Error) -> Self {
        use lstd_ac::Error as E;
        match e {
            E::Io(_) => CliError::Io(e.to_string()),
            E::ImproperPolicy(..) | E::Singular(_) | E::Reducible(_) | E::TrainingAbort { .. } | E::NonFinite(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
