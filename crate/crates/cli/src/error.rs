use std::fmt::Display;

use thiserror::Error;

/// CLI failure, split by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// A stage failed while running. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn prefixed(self, prefix: impl Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{prefix}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{prefix}: {m}")),
        }
    }
}

impl From<topeval::Error> for CliError {
    fn from(e: topeval::Error) -> Self {
        use topeval::Error as E;
        match e {
            E::InvalidInput(_) | E::Domain(_) | E::Empty(_) | E::Format(_) | E::Json(_) | E::Csv(_) => CliError::Validation(e.to_string()),
            E::Numerical(_) | E::NoResult(_) | E::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait Context<T> {
    /// Prefixes the error message, keeping its exit-code class.
    fn context(self, what: impl Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| e.into().prefixed(what))
    }
}

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
