//! Pipeline error classes and their process exit codes.
//!
//! The contract distinguishes misconfiguration (exit 2), numerical failure
//! inside a solver or factorization (exit 3), and a verification check that
//! ran to completion but did not hold (exit 4).

use std::fmt;

use mqs_rom_core::integrator::IntegratorError;
use mqs_rom_core::matcore::MatError;
use mqs_rom_core::passivity::PassivityError;
use mqs_rom_core::problem::ProblemError;
use mqs_rom_core::regularization::RegError;
use mqs_rom_core::rom::RomError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flag, unparsable config file, invalid key, or inconsistent values.
    Config(String),
    /// A required artifact from an earlier stage is missing or unreadable.
    StageDependency { missing: String, produced_by: String },
    /// A solver, factorization, or model-validation step broke down.
    Numerical(String),
    /// One or more verification checks evaluated to fail.
    Verification { failed: Vec<String> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::StageDependency { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {}", msg),
            CliError::StageDependency { missing, produced_by } => write!(
                f,
                "stage dependency error: {} is missing; run `mqs-rom {}` first",
                missing, produced_by
            ),
            CliError::Numerical(msg) => write!(f, "numerical failure: {}", msg),
            CliError::Verification { failed } => {
                write!(f, "verification failed: {}", failed.join(", "))
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<MatError> for CliError {
    fn from(e: MatError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<RegError> for CliError {
    fn from(e: RegError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<IntegratorError> for CliError {
    fn from(e: IntegratorError) -> Self {
        match e {
            // Grid and file problems trace back to the config or a damaged
            // artifact; solver breakdowns are numerical.
            IntegratorError::InvalidGrid { .. }
            | IntegratorError::Io { .. }
            | IntegratorError::Format { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<PassivityError> for CliError {
    fn from(e: PassivityError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<RomError> for CliError {
    fn from(e: RomError) -> Self {
        match e {
            // Asking for more vectors than the snapshots carry is a config
            // problem, not a numerical breakdown.
            RomError::RankExceeded { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

/// Problem construction and validation failures are config-class: the inputs
/// came straight from the user's file.
impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// I/O failure while writing an artifact we own.
pub fn write_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("cannot write {}: {}", path.display(), e))
}
