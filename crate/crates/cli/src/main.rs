//! `ghmpc`: learn uncertainty sets, run closed-loop experiments, emit plot data.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use greenhouse_core::config::ExperimentConfig;
use greenhouse_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ghmpc", version, about = "Data-driven robust MPC for greenhouse heating")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Experiment config (JSON); built-in defaults without it.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set controller.horizon=6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract forecast errors, train and calibrate the uncertainty sets.
    Learn,
    /// Run the configured strategies in closed loop and write reports.
    Simulate(commands::SimulateArgs),
    /// Turn report files into long-format CSV (timestamp, series, value).
    Plotdata(commands::PlotArgs),
    /// Check the config and print the resolved version.
    ValidateConfig,
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Solver(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::InvalidNetwork(_) | Error::InvalidArgument(_) => Failure::Config(msg),
            Error::Solver(_) | Error::QpNonConvergence { .. } | Error::RobustInfeasibleRow => Failure::Solver(msg),
            Error::InsufficientCalibration { required, .. } => {
                Failure::Data(format!("{msg}\nrequired N_calib = {required}"))
            }
            _ => Failure::Data(msg),
        }
    }
}

pub fn load_config(args: &GlobalArgs) -> Result<ExperimentConfig, Failure> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(e.to_string()),
            other => Failure::from(other),
        })?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GHMPC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Learn => commands::learn(&cli.global),
        Command::Simulate(args) => commands::simulate(&cli.global, &args),
        Command::Plotdata(args) => commands::plotdata(&args),
        Command::ValidateConfig => commands::validate_config(&cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
