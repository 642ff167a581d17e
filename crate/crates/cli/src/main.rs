mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Params;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<drlines::Error> for CliError {
    fn from(e: drlines::Error) -> Self {
        match e {
            drlines::Error::Io(e) => CliError::Io(e.to_string()),
            drlines::Error::Csv(e) if e.is_io_error() => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type Handler = fn(&Params) -> Result<(), CliError>;

/// Douglas-Rachford iteration for two lines and the x-axis.
#[derive(Parser, Debug)]
#[command(name = "drlines", version)]
struct Cli {
    /// JSON file with default values for any option
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for rasters and sweeps
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the Lyapunov certificate for an angle pair
    Certify(Params),
    /// Apply the operator a fixed number of times
    Iterate(Params),
    /// Regions of attraction on a grid of start points
    Raster(Params),
    /// Search angle pairs for non-converging starts
    Sweep(Params),
    /// Detect a periodic orbit from a start point
    Orbit(Params),
    /// Perturbed traces against the decay bound
    Robust(Params),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let (params, handler): (Params, Handler) = match cli.command {
        Command::Certify(p) => (p, commands::certify),
        Command::Iterate(p) => (p, commands::iterate),
        Command::Raster(p) => (p, commands::raster),
        Command::Sweep(p) => (p, commands::sweep),
        Command::Orbit(p) => (p, commands::orbit),
        Command::Robust(p) => (p, commands::robust),
    };
    let params = match &cli.config {
        Some(path) => params.merge_file(path)?,
        None => params,
    };
    handler(&params.apply_env()?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drlines: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
