//! `fnncc`: simulate, smooth, train and monitor functional regression
//! control charts from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fnncc_core::Error;

#[derive(Debug, Parser)]
#[command(name = "fnncc", version, about = "Functional neural network control charts")]
struct Cli {
    /// JSON run configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate train, validation, tuning and out-of-control sets.
    Simulate,
    /// Trim, re-map and smooth long-format profile CSVs.
    Ingest,
    /// Cross-validated grid search over network configurations.
    Tune,
    /// Fit the predictor behind one chart.
    Train,
    /// Estimate control limits on a tuning set.
    BuildChart,
    /// Apply a chart to new observations.
    Monitor,
    /// Run-length study over scenarios, shifts and charts.
    ArlStudy,
    /// Write the fitted functional coefficients on a grid.
    ExportWeights,
}

/// Process exit status for each error code; 2 is left to usage errors.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 10,
        Error::Schema(_) => 11,
        Error::Parse { .. } => 12,
        Error::Version { .. } => 13,
        Error::Data(_) => 14,
        Error::Degenerate(_) => 15,
        Error::IllPosed(_) => 16,
        Error::Rank { .. } => 17,
        Error::Numeric { .. } => 18,
        Error::Diverged { .. } => 19,
        Error::Calibration(_) => 20,
        Error::Io(_) => 21,
        Error::Csv(_) => 22,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FNNCC_LOG", "warn")).init();
    let cli = Cli::parse();
    let ctx = commands::Context {
        config: cli.config,
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    let result = match cli.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))
            .and_then(|pool| pool.install(|| commands::run(cli.command, &ctx))),
        None => commands::run(cli.command, &ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": { "code": e.code(), "message": e.to_string() }
            });
            eprintln!("{record}");
            ExitCode::from(exit_code(&e))
        }
    }
}
