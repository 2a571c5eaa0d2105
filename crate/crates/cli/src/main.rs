use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sddelab_cli::{run, Command, RunOptions};

/// Delay-equation rare-event laboratory: stability ladders, attractor
/// detection, action evaluation, exit thresholds, and Monte Carlo exit
/// sweeps, driven by a TOML experiment config.
#[derive(Parser, Debug)]
#[command(name = "sddelab", version, about)]
struct Cli {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    command: Command,

    /// Experiment config file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory (overrides [output].directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed override for Monte Carlo trials and optimizer restarts.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Worker thread count (overrides the SDDELAB_THREADS variable; the
    /// default lets the runtime pick). Results never depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn thread_count(cli: &Cli) -> Result<Option<usize>, String> {
    if let Some(n) = cli.threads {
        return Ok(Some(n));
    }
    match std::env::var("SDDELAB_THREADS") {
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("SDDELAB_THREADS must be a positive integer, got {raw:?}")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = match thread_count(&cli) {
        Ok(t) => t,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: thread count must be at least 1");
            return ExitCode::FAILURE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: configuring the thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }

    let opts = RunOptions { config_path: cli.config, out_dir: cli.out, seed: cli.seed };
    match run(cli.command, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
