//! `cpr`: command-line front end.
//!
//! Exit status: 0 on success, 2 for configuration or flag errors, 3 when
//! `--strict` is set and a result is indeterminate, 1 otherwise.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use log::warn;

use args::Cli;
use commands::{Status, UsageError};

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = matches!(
        err.downcast_ref::<cpr::Error>(),
        Some(cpr::Error::Config { .. })
    );
    if config || err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Indeterminate) if cli.strict => {
            eprintln!("error: result is indeterminate (iteration cap reached)");
            ExitCode::from(3)
        }
        Ok(Status::Indeterminate) => {
            warn!("result is indeterminate (iteration cap reached)");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
