//! Command-line front end: `run`, `sweep` and `verify`.

mod config;
mod error;
mod output;
mod run;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "holorefocus",
    version,
    about = "Dissipative geometric and holonomic gates with refocusing schemes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme and write report.json (and sweep.csv if the config has a grid).
    Run { config: PathBuf },
    /// Run a damping sweep and write sweep.csv plus a fit summary.
    Sweep { config: PathBuf },
    /// Run the built-in acceptance suite.
    Verify {
        /// Only criteria whose id, title or tags contain this text.
        #[arg(long)]
        filter: Option<String>,
        /// Multiply every integration step by this factor.
        #[arg(long, default_value_t = 1.0)]
        dt_scale: f64,
        /// Print every check, not just failing ones.
        #[arg(long)]
        details: bool,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HOLONOMY_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Validation(format!(
            "HOLONOMY_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(format!("HOLONOMY_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Run { config } => run::cmd_run(config),
        Command::Sweep { config } => sweep::cmd_sweep(config),
        Command::Verify {
            filter,
            dt_scale,
            details,
        } => verify::cmd_verify(filter.as_deref(), *dt_scale, *details),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
