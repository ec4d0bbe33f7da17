//! Command-line front end: forward simulation, synthetic data generation,
//! TMCMC calibration and posterior summaries.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("forward model failure: {0}")]
    Forward(String),
    #[error("sampler stopped at r = {0} before reaching 1; partial results written")]
    StageLimit(f64),
    #[error("sampler error: {0}")]
    Sampler(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Forward(_) => 3,
            CliError::StageLimit(_) => 4,
            CliError::Sampler(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "viscoid", version, about = "Chaboche viscoplastic model calibration by TMCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults are used for missing sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Measurement JSON (calibrate) or samples CSV (summarize)
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Output directory, overrides output.dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed, overrides the config's top-level seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap for the sampler
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override a config field by dotted path, e.g. tmcmc.n_samples=200
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the truth parameters and write the full trajectory
    Simulate,
    /// Write noisy virtual measurements of the monitored node
    Generate,
    /// Sample the posterior of the five parameters from measurement data
    Calibrate {
        /// Replace the likelihood by a constant (the posterior is the prior)
        #[arg(long)]
        flat_likelihood: bool,
    },
    /// Histograms and moments of an existing samples CSV
    Summarize,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut sets = cli.sets.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        sets.push(format!("output.dir={}", serde_json::Value::String(out.display().to_string())));
    }
    let config = config::load(cli.config.as_deref(), &sets)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Generate => commands::generate_data(&config),
        Command::Calibrate { flat_likelihood } => commands::calibrate(&config, cli.data.as_deref(), flat_likelihood),
        Command::Summarize => commands::summarize_samples(&config, cli.data.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
