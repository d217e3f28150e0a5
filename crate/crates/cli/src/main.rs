//! `televit`: synthesize, train, evaluate, predict and inspect.
//!
//! Every subcommand reads one TOML run configuration (`--config`) with
//! optional `--set key=value` overrides, validates it before doing any
//! work, and writes its artifacts plus a `manifest.json` under the
//! configured output directory.

mod evaluate;
mod inspect;
mod output;
mod pipeline;
mod predict;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use televit::Error;

#[derive(Debug, Parser)]
#[command(
    name = "televit",
    version,
    about = "Teleconnection-aware burned-area forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic datacube with planted fire drivers.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one model per configured forecast horizon.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Horizons trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score trained models and the climatology baseline on the test split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Only score the climatology baseline; no checkpoints needed.
        #[arg(long)]
        climatology_only: bool,
    },
    /// Forecast the full grid for one input date.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input date, YYYY-MM-DD; the step containing it is used.
        #[arg(long)]
        date: chrono::NaiveDate,
        #[arg(long)]
        horizon: usize,
    },
    /// Attention roll-out and integrated gradients for selected patches.
    Inspect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        date: chrono::NaiveDate,
        #[arg(long)]
        horizon: usize,
        /// Patch as ROW,COL; repeatable. Defaults to every land patch.
        #[arg(long = "patch", value_parser = parse_patch)]
        patches: Vec<(usize, usize)>,
        /// Threads for the integrated-gradient steps.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn parse_patch(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("`{s}` is not ROW,COL"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{v}` is not a patch index"))
    };
    Ok((parse(r)?, parse(c)?))
}

/// Exit status for each error category.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::InputDomain(_) => 3,
        Error::Numeric(_) => 4,
        Error::Contract(_) => 5,
        Error::UndefinedMetric(_) => 6,
        Error::Format { .. } => 7,
        Error::Io { .. } => 8,
    }
}

fn run(cli: Cli) -> televit::Result<()> {
    match cli.command {
        Command::Synth { config } => synth::run(&config),
        Command::Train { config, jobs } => train::run(&config, jobs),
        Command::Evaluate {
            config,
            climatology_only,
        } => evaluate::run(&config, climatology_only),
        Command::Predict {
            config,
            date,
            horizon,
        } => predict::run(&config, date, horizon),
        Command::Inspect {
            config,
            date,
            horizon,
            patches,
            jobs,
        } => inspect::run(&config, date, horizon, &patches, jobs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
