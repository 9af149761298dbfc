use std::process::ExitCode;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, flags or input files. Exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Anything that went wrong while running. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    pub fn runtime(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{context}: {err}"))
    }
}
