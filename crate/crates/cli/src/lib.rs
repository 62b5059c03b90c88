//! `hyperhate` command-line front end.
//!
//! Every subcommand resolves its settings from flags, then `HYPERHATE_*`
//! environment variables, then an optional `--config` key=value file, then
//! built-in defaults, and records the resolved values as `run_config.txt`
//! in its output directory.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

mod commands;
mod config;

pub use commands::Cli;
pub use config::{ConfigFile, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// A command-line or configuration mistake (exit code 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Maps a failure to its exit code by looking for the first library or
/// usage error in its cause chain; anything else counts as a data error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<hyperhate::Error>() {
            return if e.is_numeric() {
                EXIT_NUMERIC
            } else if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            };
        }
    }
    EXIT_DATA
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version also arrive here, on stdout with success.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let usage = anyhow::Error::new(UsageError("x".into()));
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let config = anyhow::Error::new(hyperhate::Error::Config("x".into()));
        assert_eq!(exit_code(&config.context("while training")), EXIT_USAGE);
        let numeric = anyhow::Error::new(hyperhate::Error::NonFinite { what: "loss", epoch: 1 });
        assert_eq!(exit_code(&numeric), EXIT_NUMERIC);
        let data = anyhow::Error::new(hyperhate::Error::EmptyCorpus);
        assert_eq!(exit_code(&data), EXIT_DATA);
        assert_eq!(exit_code(&anyhow::anyhow!("disk on fire")), EXIT_DATA);
    }

    #[test]
    fn unknown_commands_and_flags_are_usage_errors() {
        assert_eq!(run(["hyperhate", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["hyperhate", "params", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["hyperhate", "params", "--model", "resnet"]), EXIT_USAGE);
        assert_eq!(run(["hyperhate", "--help"]), EXIT_OK);
    }
}
