//! Config-driven runner for `twostep`: traces, sweeps, spectra and
//! effective Hamiltonians written as CSV and JSON.

pub mod config;
pub mod emit;
mod run;

pub use config::{parse_config, Command, RunPlan, Sampling, Source, Sweep};
pub use run::run;

/// Exit status for configuration and input errors.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for numeric failures inside the simulator.
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Model {
        context: String,
        #[source]
        source: twostep::Error,
    },
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Model { source, .. } if source.is_numeric() => EXIT_NUMERIC,
            CliError::Model { .. } => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}
