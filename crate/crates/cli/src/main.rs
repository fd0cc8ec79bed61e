//! `bloch-dos <command> --config <file> [--out <dir>] [--workers N]`
//!
//! Exit status: 0 success, 1 I/O failure, 2 invalid configuration or
//! parameters, 3 solver failure, 4 a precondition of the checked statement
//! does not hold (for example an eigenvalue below `zeta_0`).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{CommandName, RunConfig};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "bloch-dos", version, about = "Band structures, IDS and DOS windows for periodic Schrödinger operators")]
struct Cli {
    #[arg(value_enum)]
    command: CommandName,
    /// TOML config, or a JSON report from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output` from the config, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: `workers` from the config, else all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bloch-dos {}: {e}", cli.command.as_str());
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = RunConfig::load(&cli.config)?;
    if let Some(n) = cli.workers.or(config.workers) {
        bloch_dos::exec::configure_workers(n)?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let run = commands::run(cli.command, &config, &out)?;
    let files: Vec<String> = run.files.iter().map(|p| p.display().to_string()).collect();
    println!("{} -> {}", run.summary, files.join(", "));
    Ok(())
}
