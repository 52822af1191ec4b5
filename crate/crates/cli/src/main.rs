use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use plinfer_cli::{run, CliError, Mode, RunConfig};

/// Environment variable read when `--workers` is not given.
const WORKERS_ENV: &str = "PLINFER_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "plinfer",
    version,
    about = "Constrained probabilistic learning with implicit constraints"
)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `mode` from the config.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the worker pool; defaults to $PLINFER_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-iteration progress on stderr.
    #[arg(long)]
    quiet: bool,
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Config {
            field: WORKERS_ENV.into(),
            reason: format!("`{v}` is not a worker count"),
        }),
        Err(_) => Ok(None),
    }
}

fn execute(args: Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mode = args.mode.or(cfg.mode).ok_or_else(|| CliError::Config {
        field: "mode".into(),
        reason: "not set in the config and no --mode given".into(),
    })?;
    let out = args
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Some(n) = workers(args.workers)? {
        if n == 0 {
            return Err(CliError::Config {
                field: "workers".into(),
                reason: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("worker pool: {e}")))?;
    }
    run::run(&cfg, mode, &out, !args.quiet)
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
