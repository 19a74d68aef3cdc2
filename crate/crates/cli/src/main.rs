//! `vsense`: offline model preparation and online force identification.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "vsense",
    version,
    about = "Force identification and virtual sensing pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides any config key, e.g. `--set regularization.alpha=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the full model and save it.
    Build(Common),
    /// Reduce the saved model and write the eigenvalue errors.
    Reduce(Common),
    /// Simulate truth responses and measurement channels.
    Simulate(Common),
    /// Pick the regularization parameter from the L-curve.
    Calibrate(Common),
    /// Stream the measurements through the identification loop.
    Identify(Common),
    /// Run the augmented Kalman filter baseline.
    Akf(Common),
    /// Score a run against the simulated truth.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Run directory to score; overrides `metrics.estimate`.
        #[arg(long, value_name = "DIR")]
        estimate: Option<PathBuf>,
    },
    /// Measure the per-step latency of the identification loop.
    Bench(Common),
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = RunConfig::load(&common.config, &overrides)?;
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Build(c) => commands::build(&load(&c)?),
        Command::Reduce(c) => commands::reduce(&load(&c)?),
        Command::Simulate(c) => commands::simulate_cmd(&load(&c)?),
        Command::Calibrate(c) => commands::calibrate(&load(&c)?),
        Command::Identify(c) => commands::identify(&load(&c)?),
        Command::Akf(c) => commands::akf(&load(&c)?),
        Command::Metrics { common, estimate } => {
            let mut cfg = load(&common)?;
            if estimate.is_some() {
                cfg.metrics.estimate = estimate;
            }
            commands::metrics(&cfg)
        }
        Command::Bench(c) => commands::bench(&load(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
