//! `roast`: command-line driver for the compression library.
//!
//! Subcommands: `bench` (kernel timing grid), `estimate` (estimator
//! studies), `train` (compression sweeps on synthetic data), `verify`
//! (gradient/oracle checks), `store save|load` (snapshots).
//!
//! Every run writes `manifest.json` into the output directory echoing the
//! fully resolved configuration; re-running with `--config manifest.json`
//! reproduces the run. Exit codes: 0 success, 2 configuration error,
//! 3 verification failure, 4 I/O or format error.

mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roast_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "roast",
    version,
    about = "hash-compressed models: kernels, estimators, training"
)]
struct Cli {
    /// JSON config file (a params object or a previous manifest.json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed driving every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread cap for forward/backward passes and trials.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for CSVs and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time the matmul kernels over a (dims × stores × kernels) grid.
    Bench(commands::BenchArgs),
    /// Estimator studies: Monte Carlo moments, variance gap, norm preservation.
    Estimate(commands::EstimateArgs),
    /// Train compressed models over ratio/sharing/seed sweeps.
    Train(commands::TrainArgs),
    /// Run the gradient and oracle check suite.
    Verify(verify::VerifyArgs),
    /// Save or load store snapshots.
    Store(commands::StoreArgs),
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Io(_) | Error::Format(_) => ExitCode::from(4),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = commands::Globals {
        config: cli.config,
        seed: cli.seed.unwrap_or(42),
        threads: cli.threads.unwrap_or(1).max(1),
        out: cli.out.unwrap_or_else(|| PathBuf::from("runs")),
    };
    let result = match cli.command {
        Command::Bench(args) => commands::run_bench(&globals, args),
        Command::Estimate(args) => commands::run_estimate(&globals, args),
        Command::Train(args) => commands::run_train(&globals, args),
        Command::Verify(args) => verify::run_verify(&globals, args),
        Command::Store(args) => commands::run_store(&globals, args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
