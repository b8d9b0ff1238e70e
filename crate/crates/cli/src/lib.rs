//! The `pilir` command-line tool: experiment runs, evaluation and spectral
//! analysis of checkpoints, and reference solutions.

pub mod args;
pub mod error;
pub mod inspect;
pub mod run;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, Kind};

/// Parses `argv` and runs the command, writing results to `out` and one
/// `error[<tag>]: ...` line to `err` on failure. Returns the exit code.
pub fn run(argv: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}").ok();
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            writeln!(err, "{}", CliError::new(Kind::Usage, first).line()).ok();
            return Kind::Usage.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(a) => run::cmd_train(a, out),
        Command::Sweep(a) => run::cmd_sweep(a, out),
        Command::Eval(a) => inspect::cmd_eval(a, out),
        Command::Spectrum(a) => inspect::cmd_spectrum(a, out),
        Command::Reference(a) => inspect::cmd_reference(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "{}", e.line()).ok();
            e.kind.exit_code()
        }
    }
}
