//! `leal`: data preparation, training, evaluation and the theory checks.
//!
//! Every command writes `metrics.json`, `report.csv` and `manifest.json`
//! into its output directory. Errors go to stderr as one JSON line; usage
//! and configuration errors exit with 2 before anything is written, runtime
//! failures exit with 1.

mod args;
mod commands;
mod config;
mod error;
mod output;
mod source;
mod sweep;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;
use crate::error::CliError;

fn threads_from_env() -> Result<(), CliError> {
    match std::env::var("LEAL_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config {
                path: "LEAL_THREADS".into(),
                msg: format!("expected a positive integer, got {v:?}"),
            })?;
            leal_core::par::init_threads(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

fn execute(argv: Vec<OsString>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    threads_from_env()?;
    let (name, config) = args::resolve(cli)?;
    let dir = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("leal-out").join(name));
    let outputs = match name {
        "synth" => commands::synth(&config)?,
        "train" => commands::train(&config)?,
        "eval" => commands::eval(&config)?,
        "ablate" => commands::ablate(&config)?,
        "theory" => commands::theory(&config)?,
        "sweep" => sweep::sweep(&config, &dir)?,
        "timing" => commands::timing(&config)?,
        other => unreachable!("unhandled command {other}"),
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    output::write_dir(&dir, name, &argv, &config, &outputs)
}

fn main() {
    let code = match execute(std::env::args_os().collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
