//! Experiment runner for the robust LBF simulation study.
//!
//! `rlbf run` sweeps a JSON-configured grid of window widths, noise points
//! and seeds and writes one CSV row per algorithm and run. `rlbf bench`
//! does the same with per-frame timing, and `rlbf mopt` tabulates the
//! optimal basis count against the window width.
//!
//! Exit codes: 0 on success, 1 on I/O failure, 2 on a configuration error
//! (the message names the offending key), 3 on a numerical failure (the
//! message names the window).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod config;
pub mod run;

pub use config::{ExperimentSpec, NoiseGrid};
pub use run::{emit_mopt_table, run_grid, write_csv, MoptRow, Row};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("numerical failure at window {window}: {reason}")]
    Numerical { window: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Numerical { .. } => 3,
        }
    }
}

impl From<rlbf_core::Error> for CliError {
    fn from(e: rlbf_core::Error) -> Self {
        match e {
            rlbf_core::Error::Numerical { window, reason } => CliError::Numerical { window, reason },
            other => CliError::config("config", other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rlbf", version, about = "Robust LBF tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON experiment specification.
    #[arg(long)]
    config: PathBuf,
    /// CSV output path; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds` in the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte-Carlo grid and write MSE rows.
    Run(Common),
    /// Run the grid with per-frame timing (single-threaded unless told otherwise).
    Bench(Common),
    /// Tabulate the optimal basis count for each configured width.
    Mopt(Common),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rlbf: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (common, timing) = match &cli.command {
        Command::Run(c) | Command::Mopt(c) => (c, false),
        Command::Bench(c) => (c, true),
    };
    let mut spec = ExperimentSpec::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(out) = &common.out {
        spec.out = Some(out.clone());
    }
    spec.record_timing |= timing;
    spec.validate()?;
    match cli.command {
        Command::Mopt(_) => write_csv(&emit_mopt_table(&spec)?, spec.out.as_deref()),
        Command::Run(_) | Command::Bench(_) => {
            let threads = common.threads.unwrap_or(if timing { 1 } else { 0 });
            write_csv(&run_grid(&spec, threads)?, spec.out.as_deref())
        }
    }
}
