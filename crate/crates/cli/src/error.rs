//! Process-level error classification.
//!
//! Exit codes: 0 success, 2 configuration or usage problems, 3 runtime
//! failures inside an experiment, 4 verification failures (an audit or
//! validity check found a violation). Clap reports its own usage errors
//! with code 2 as well.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad or incomplete configuration; exit code 2.
    Config(String),
    /// Experiment failed while running; exit code 3.
    Run(gwspeed_core::Error),
    /// Filesystem trouble; exit code 3.
    Io(std::io::Error),
    /// A verification command found a real violation; exit code 4.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Run(e) => write!(f, "run failed: {e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gwspeed_core::Error> for CliError {
    fn from(e: gwspeed_core::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
