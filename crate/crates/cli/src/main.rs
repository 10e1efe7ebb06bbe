//! Command-line entry point: ingestion, calibration, simulation, evaluation,
//! and synthetic-data generation.

mod args;
mod commands;
mod config;
mod manifest;
mod models;
mod plot;
mod posterior_io;

use clap::error::ErrorKind;
use clap::Parser;
use std::process::ExitCode;

/// Exit codes: 0 success, 2 completed with warnings, 64 usage, 65 data.
pub const EXIT_OK: u8 = 0;
pub const EXIT_WARN: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::from(EXIT_OK);
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err))
        }
    }
}

/// Usage mistakes exit 64; anything touching data or computation exits 65.
fn classify_error(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<cfcal_core::Error>() {
        return match core {
            cfcal_core::Error::Param(_) | cfcal_core::Error::Dim(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    EXIT_DATA
}

/// Marker for flag-level mistakes detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}
