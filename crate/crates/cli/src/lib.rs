//! File formats and subcommands of the `spectral-panel` command-line tool.

pub mod commands;
pub mod io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}, column '{column}': {message}")]
    Parse {
        path: String,
        line: usize,
        column: String,
        message: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// Process exit code: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}
