use std::process::ExitCode;

use clap::Parser;
use dcil::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dcil: error: {e}");
            ExitCode::FAILURE
        }
    }
}
