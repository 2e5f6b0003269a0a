use std::process::ExitCode;

use clap::Parser;

mod commands;

use commands::{Cli, Outcome};

/// Infeasible QoS budget.
const EXIT_INFEASIBLE: u8 = 2;
/// Bad arguments or input files.
const EXIT_INVALID_INPUT: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_INVALID_INPUT } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<daedvfs_core::Error>() {
        Some(daedvfs_core::Error::Io(_)) => 1,
        Some(_) => EXIT_INVALID_INPUT,
        None if err.downcast_ref::<commands::UsageError>().is_some() => EXIT_INVALID_INPUT,
        None => 1,
    }
}
