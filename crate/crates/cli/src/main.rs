mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;

/// Kernel instrumental-variable regression with observed covariates.
#[derive(Debug, Parser)]
#[command(name = "kivo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Master seed, overriding `dgp.seed`.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from the configured generator.
    Simulate(#[command(flatten)] Common),
    /// Fit a model; writes the model file and, with --out, in-sample fitted values.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Predict at the stage-2 points of a dataset or at query points.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        query: Option<PathBuf>,
    },
    /// Leave-one-out grid search around the scheduled lengthscales.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Convergence sweep over bench.n_list.
    Rates(#[command(flatten)] Common),
    /// KIV-O against naive augmentation on paired datasets.
    Compare(#[command(flatten)] Common),
    /// Contractivity probe and operator checks.
    Diagnose(#[command(flatten)] Common),
    /// Evaluate a hard instance on a grid.
    HardInstance(#[command(flatten)] Common),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("KIVO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("KIVO_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Fit { common, data, model } => commands::fit(&common, data, model),
        Command::Predict {
            common,
            model,
            data,
            query,
        } => commands::predict(&common, model, data, query),
        Command::Cv { common, data } => commands::cv(&common, data),
        Command::Rates(c) => commands::rates(&c),
        Command::Compare(c) => commands::compare(&c),
        Command::Diagnose(c) => commands::diagnose(&c),
        Command::HardInstance(c) => commands::hard_instance(&c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
