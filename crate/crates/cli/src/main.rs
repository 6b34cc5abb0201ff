//! `trapscore`: simulate surveillance data, score traps, and estimate
//! dose-response curves for trap-site covariates.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, Settings};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "trapscore", version, about)]
struct Cli {
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (pools, sites, cases, ground truth) to --out.
    Simulate,
    /// Fit the spatial model and cross-validate per-trap sensitivity and specificity.
    Phase1,
    /// Score traps from the phase 1 confusion tables.
    Phase2,
    /// Estimate covariate dose-response curves for the phase 2 scores.
    Phase3,
    /// Run phases 1 to 3; phase 3 is skipped when no DAG is available.
    All,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&settings),
        Command::Phase1 => commands::phase1(&settings),
        Command::Phase2 => commands::phase2(&settings),
        Command::Phase3 => commands::phase3(&settings),
        Command::All => commands::all(&settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !message.contains(&text) {
                    message.push_str(": ");
                    message.push_str(&text);
                }
                source = s.source();
            }
            eprintln!("error: {message}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
