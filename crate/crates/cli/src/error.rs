use std::fmt;

pub const EXIT_OK: i32 = 0;
/// Bad flags, config or input data.
pub const EXIT_INPUT: i32 = 2;
/// Missing or corrupt run artifacts, or failure to write outputs.
pub const EXIT_ARTIFACT: i32 = 3;
/// The run finished but some folds were invalid.
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn artifact(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ARTIFACT,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub(crate) trait Context<T> {
    fn input_err(self, what: &str) -> Result<T, CliError>;
    fn artifact_err(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn input_err(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::input(format!("{what}: {e}")))
    }

    fn artifact_err(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::artifact(format!("{what}: {e}")))
    }
}
