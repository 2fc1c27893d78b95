use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("{failed} of {total} acceptance criteria failed")]
    VerifyFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed { .. } | CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Wraps a library error with the context it occurred in.
    pub fn from_core(context: &str, e: holorefocus::Error) -> Self {
        let msg = format!("{context}: {e}");
        if e.is_numerical() {
            CliError::Numerical(msg)
        } else if matches!(e, holorefocus::Error::Io(_)) {
            CliError::Io(msg)
        } else {
            CliError::Validation(msg)
        }
    }
}
