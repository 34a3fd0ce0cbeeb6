//! Experiment runner: config parsing, dispatch to the library, result
//! files with a manifest, and run-to-run comparison.

pub mod config;
pub mod diff;
pub mod run;

pub use config::{ExperimentConfig, Kind};
pub use diff::{diff_runs, DiffReport};
pub use run::{run_experiment, Check, Outcome, RunOptions};

#[derive(Debug)]
pub enum CliError {
    /// Bad command line, unreadable or invalid config.
    Usage(String),
    /// The model misses an assumption the experiment needs.
    Assumption(String),
    /// Numerical failure inside the library.
    Numeric(adhp::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Assumption(m) => write!(f, "assumption failure: {m}"),
            CliError::Numeric(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<adhp::Error> for CliError {
    fn from(e: adhp::Error) -> Self {
        CliError::Numeric(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assumption(_) => 2,
            _ => 1,
        }
    }
}

/// Exit status when every acceptance check passed (0) or some failed (3).
pub fn outcome_code(o: &Outcome) -> i32 {
    if o.passed() {
        0
    } else {
        3
    }
}
