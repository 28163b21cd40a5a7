use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use doic_cli::{run_preset, ConfigFile, ExperimentPreset, RunSettings};

/// Run simulator experiments and write their curves.
///
/// Exit status: 0 when every check held, 2 when only statistical checks
/// fell outside tolerance, 1 on errors or broken hard invariants.
#[derive(Debug, Parser)]
#[command(name = "doic", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("DOIC_GIT_DESCRIBE"), ")"))]
struct Args {
    /// TOML experiment file; defaults to the reference scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "custom")]
    preset: ExperimentPreset,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config horizon, in slots.
    #[arg(long)]
    horizon: Option<u64>,
    /// Replicates per sweep point.
    #[arg(long)]
    replicates: Option<usize>,
    /// Also write packet and frame logs of one run.
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let config = match args.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(cfg) = &config {
        log::info!("resolved configuration:\n{}", cfg.to_toml());
    }
    let settings = RunSettings {
        out_dir: args.out,
        workers: args.workers,
        config,
        seed: args.seed,
        horizon: args.horizon,
        replicates: args.replicates,
        trace: args.trace,
    };
    match run_preset(args.preset, settings) {
        Ok(outcome) => {
            for f in &outcome.hard_failures {
                eprintln!("hard failure: {f}");
            }
            for f in &outcome.soft_failures {
                eprintln!("outside tolerance: {f}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
