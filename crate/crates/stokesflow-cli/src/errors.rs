//! Error channel and the exit-code policy.
//!
//! Exit codes: 0 success, 1 usage/parse/I-O trouble, 2 configuration
//! rejected, 3 run stopped at the iteration cap, 4 divergence guard tripped.
//! Solver options are validated by the CLI before any library call, so an
//! `InvalidInput` surfacing from the library is configuration-class (an
//! unrealizable generator request or a missing separation margin), not a
//! flag mistake.

use stokesflow::Error;

/// Exit code for a run that stopped at its iteration cap.
pub const EXIT_MAX_ITERATIONS: u8 = 3;
/// Exit code for a run that tripped the divergence guard.
pub const EXIT_DIVERGED: u8 = 4;

/// Anything a subcommand can fail with.
#[derive(Debug)]
pub enum CliError {
    /// Wrong invocation: missing sections, missing seed, bad option values.
    Usage(String),
    /// Unreadable or syntactically invalid scenario file.
    Parse(String),
    /// Filesystem trouble while reading scenarios or writing artifacts.
    Io(String),
    /// An error from the solver library, mapped by [`exit_code_for`].
    Lib(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse(_) | CliError::Io(_) => 1,
            CliError::Lib(err) => exit_code_for(err),
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Parse(m) | CliError::Io(m) => m.clone(),
            CliError::Lib(err) => err.to_string(),
        }
    }
}

/// Map a library error onto the documented exit codes. Configuration
/// rejections exit 2; divergence exits 4; anything else is reported as
/// general failure 1.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Overlap { .. }
        | Error::NonPositiveRadius { .. }
        | Error::GenerationFailed { .. }
        | Error::InvalidInput(_) => 2,
        _ => 1,
    }
}
