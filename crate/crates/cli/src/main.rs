//! `descent`: command-line front end for descent-core.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },
    #[error(transparent)]
    Core(descent::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(line: usize, key: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl From<descent::Error> for CliError {
    fn from(e: descent::Error) -> Self {
        match e {
            descent::Error::Config { line, key, message } => CliError::Config { line, key, message },
            other => CliError::Core(other),
        }
    }
}

#[derive(Parser)]
#[command(
    version,
    about = "Hitting times, descent from infinity and spectral densities of dX = dB - q(X)dt"
)]
struct Cli {
    /// Model and run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Exit nonzero when any statistical check fails
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the entrance-boundary hypotheses; exit 0 iff H1 passes
    Check,
    /// Table of m, M, variance and moment ratios over z
    Moments,
    /// Descent-time LLN ratios from infinity
    Simulate,
    /// KS test of standardized descent times
    Clt,
    /// KS test of standardized positions at small t
    Fluct,
    /// Survival tail from infinity: series, fit and Monte Carlo rate
    Yaglom,
    /// Eigenvalues and eigenfunction summaries of the killed generator
    Spectrum,
    /// Transition density r(t, y, x) on a grid
    Density,
    /// Uniform ratio error r(t, inf, x)/r(t, y, x) - 1 over starts y
    Ratio,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Moments => "moments",
            Command::Simulate => "simulate",
            Command::Clt => "clt",
            Command::Fluct => "fluct",
            Command::Yaglom => "yaglom",
            Command::Spectrum => "spectrum",
            Command::Density => "density",
            Command::Ratio => "ratio",
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => return Err(CliError::config(0, "--config", "a model config file is required")),
    };
    let cfg = RunConfig::parse(&text, cli.seed)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config(0, "--threads", "must be at least 1"));
        }
        // a pool may already exist when embedded; the cap is best effort then
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Check => commands::check(&cfg, out),
        Command::Moments => commands::moments(&cfg, out),
        Command::Simulate => commands::simulate(&cfg, out),
        Command::Clt => commands::clt(&cfg, out),
        Command::Fluct => commands::fluct(&cfg, out),
        Command::Yaglom => commands::yaglom(&cfg, out),
        Command::Spectrum => commands::spectrum(&cfg, out),
        Command::Density => commands::density(&cfg, out),
        Command::Ratio => commands::ratio(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if cli.strict || matches!(cli.command, Command::Check) => {
            eprintln!("{}: check failed", cli.command.name());
            ExitCode::from(1)
        }
        Ok(false) => ExitCode::SUCCESS,
        Err(e @ CliError::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
