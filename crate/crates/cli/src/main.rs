//! `relmap` command-line interface.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

/// Exit status for invalid configuration or input data.
const EXIT_CONFIG: u8 = 2;
/// Exit status for failures while running a valid configuration.
const EXIT_RUNTIME: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
