//! `storex`: dataset generation, surrogate training, Q-learning, policy
//! extraction, evaluation and plot-ready reports.
//!
//! Exit codes: 0 success, 1 usage or missing input, 2 validation,
//! 3 incompatible artifacts.

mod commands;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "storex", version, about = "Microgrid storage-expansion planner")]
struct Cli {
    /// Worker threads for parallel stages (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate outage costs over sampled fleets and write the dataset.
    GenData(GenDataArgs),
    /// Fit the surrogate forest to a dataset.
    TrainMeta(TrainMetaArgs),
    /// Run Q-learning against a trained surrogate.
    Solve(SolveArgs),
    /// Extract greedy policies along price scenarios.
    Policy(PolicyArgs),
    /// Evaluate policies on the full simulator with common random numbers.
    Evaluate(EvaluateArgs),
    /// Collect plot-ready CSVs from a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset rows (default: from the config).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub observations: Option<u64>,
    /// Monte Carlo trials per row (default: from the config).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainMetaArgs {
    /// Dataset CSV; its directory must hold the manifest written by gen-data.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trees: Option<u64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub forest: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(100..))]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub qtable: PathBuf,
    /// Scenario id, or `all`.
    #[arg(long, default_value = "all")]
    pub scenario: String,
    /// Scenario file (default: the bundled presets).
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `never`, a policy JSON written by `policy`, or a Q-table (greedy).
    #[arg(long = "policy", required = true)]
    pub policies: Vec<String>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Simulated horizons behind the outage-duration histogram.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizons: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Missing(String),
    Validation(String),
    Incompatible(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Missing(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Incompatible(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Missing(m) => write!(f, "missing input: {m}"),
            CliError::Validation(m) => write!(f, "invalid: {m}"),
            CliError::Incompatible(m) => write!(f, "incompatible: {m}"),
        }
    }
}

impl From<storex_core::Error> for CliError {
    fn from(e: storex_core::Error) -> Self {
        use storex_core::Error as E;
        match e {
            E::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::Missing(e.to_string()),
            E::Incompatible(_) => CliError::Incompatible(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Validation(format!("{}: {e}", path.display()));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(fail)?;
    f.write_all(bytes).map_err(fail)?;
    f.sync_all().map_err(fail)?;
    std::fs::rename(&tmp, path).map_err(fail)
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
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainMeta(a) => commands::train_meta(a),
        Command::Solve(a) => commands::solve(a),
        Command::Policy(a) => commands::policy(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("storex: {e}");
            ExitCode::from(e.code())
        }
    }
}
