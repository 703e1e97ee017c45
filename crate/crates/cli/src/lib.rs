//! File formats and subcommands behind the `pmucal` binary.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod report;

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NO_FEASIBLE: i32 = 4;
pub const EXIT_SELF_CHECK: i32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Io(String),
    NoFeasible(String),
    SelfCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::NoFeasible(_) => EXIT_NO_FEASIBLE,
            CliError::SelfCheck(_) => EXIT_SELF_CHECK,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::NoFeasible(m) => write!(f, "no feasible hypothesis: {m}"),
            CliError::SelfCheck(m) => write!(f, "self-check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pmucal::Error> for CliError {
    fn from(e: pmucal::Error) -> Self {
        match e {
            pmucal::Error::NoFeasibleHypothesis => CliError::NoFeasible("every candidate produced a degenerate cluster".into()),
            pmucal::Error::Usage(m) => CliError::Usage(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}
