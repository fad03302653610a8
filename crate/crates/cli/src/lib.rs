//! Front end for the flocking-hydrodynamics toolkit: config parsing, command
//! dispatch, checkpoint persistence, and CSV/report emission.

pub mod checkpoint;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Numerical(#[from] flockhydro_core::Error),
}

impl CliError {
    /// 2 for bad configuration, 1 for anything that failed mid-run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
