//! Reproducible experiment runner for the Bukhgeim-type inverse scattering
//! pipeline: forward scattering data, reconstruction, roundtrip comparison
//! and decay diagnostics.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "bukhgeim", version, about = "Inverse scattering for the 2D complex conductivity equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides out_dir in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides BUKHGEIM_THREADS and the config).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a scattering dataset from a conductivity preset.
    Forward(CommonArgs),
    /// Reconstruct potential and conductivity from a dataset file.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset file produced by `forward`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Forward then reconstruct, comparing against the known ground truth.
    Roundtrip(CommonArgs),
    /// Shell-decay norms and the stationary-phase error table.
    Diagnostics(CommonArgs),
}

/// Thread count precedence: --threads, then BUKHGEIM_THREADS, then the
/// config's parallel_width, then one worker per core.
fn resolve_threads(flag: Option<usize>, cfg: &ExperimentConfig) -> Result<usize, String> {
    if let Some(t) = flag {
        return Ok(t.max(1));
    }
    if let Ok(v) = std::env::var("BUKHGEIM_THREADS") {
        return v
            .trim()
            .parse::<usize>()
            .map(|t| t.max(1))
            .map_err(|_| format!("BUKHGEIM_THREADS must be an integer, got '{v}'"));
    }
    Ok(cfg.parallel_width.unwrap_or_else(num_threads).max(1))
}

fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn run() -> Result<(), commands::CommandError> {
    let cli = Cli::parse();
    let (common, dataset) = match &cli.command {
        Command::Forward(c) | Command::Roundtrip(c) | Command::Diagnostics(c) => (c, None),
        Command::Reconstruct { common, dataset } => (common, Some(dataset.clone())),
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let threads = resolve_threads(common.threads, &cfg)
        .map_err(|m| commands::CommandError { message: m, exit_code: 2 })?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| commands::CommandError {
            message: "no output directory: pass --out or set out_dir in the config".into(),
            exit_code: 2,
        })?;
    // Parallelism is confined to the dataset sweep; the orchestrator itself
    // stays single-threaded.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match cli.command {
        Command::Forward(_) => commands::cmd_forward(cfg, out_dir, threads),
        Command::Reconstruct { .. } => {
            commands::cmd_reconstruct(cfg, dataset.expect("dataset arg"), out_dir, threads)
        }
        Command::Roundtrip(_) => commands::cmd_roundtrip(cfg, out_dir, threads),
        Command::Diagnostics(_) => commands::cmd_diagnostics(cfg, out_dir, threads),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code as u8)
        }
    }
}
