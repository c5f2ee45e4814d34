//! Command-line front end for fsHBMAP experiments.
//!
//! ```text
//! fshbmap <simulate|reconstruct|sweep|compare> <config> [--key=value ...]
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use crate::error::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "fshbmap",
    version,
    about = "Fast stochastic hierarchical Bayesian MAP tomography"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    config: PathBuf,
    /// Per-key overrides, e.g. `--seed=3`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY=VALUE"
    )]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a noisy measurement and write y.csv.
    Simulate(RunArgs),
    /// Reconstruct with the configured method: recon.pgm, metrics.csv, trace.csv.
    Reconstruct(RunArgs),
    /// SSIM and time against SPSA iteration count: sweep.csv.
    Sweep(RunArgs),
    /// All methods on the same measurement, ranked: compare.csv.
    Compare(RunArgs),
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::Config as i32
            } else {
                ExitCode::Success as i32
            };
        }
    };
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Reconstruct(a) => ("reconstruct", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Compare(a) => ("compare", a),
    };
    let env_dir = std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let result = ExperimentConfig::load(&args.config, &args.overrides, env_dir)
        .and_then(|cfg| commands::execute(name, &cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::Success as i32
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code() as i32
        }
    }
}
