use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match gatraj::cli::run(gatraj::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
