//! Experiment runner behind the `prosocial` binary.

pub mod config;
pub mod experiment;

pub use config::ExperimentConfig;
pub use experiment::{cmd_report, cmd_run, cmd_sweep, ExperimentSpec, Manifest, RunOutcome};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, spec or config; exit code 1.
    Usage(String),
    /// Failure while running; exit code 2.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}
