//! Command-line entry points: `simulate`, `estimate`, `fed-run` and
//! `mse-curve`.
//!
//! Exit codes: 0 success, 1 estimation failure, 2 more than 1% of Monte Carlo
//! replicates failed, 64 usage or configuration error, 65 input schema
//! error, 70 protocol violation, 74 i/o failure.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::measure::CausalMeasure;

pub use commands::{
    cmd_estimate, cmd_fed_run, cmd_mse_curve, cmd_simulate, run_estimators, site_inputs, ForestRow, RunOutput,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_PROTOCOL: i32 = 70;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "fedcausal", version, about = "Federated multiply robust estimation of causal risk ratios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo study of a built-in scenario or a scenario file.
    Simulate(SimulateArgs),
    /// Estimators on per-site CSV files, in process.
    Estimate(EstimateArgs),
    /// Estimators over the message protocol, one directory per site.
    FedRun(FedRunArgs),
    /// Bootstrap MSE curve of the selective estimator.
    MseCurve(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Rr,
    Rd,
}

impl From<MeasureArg> for CausalMeasure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Rr => CausalMeasure::RiskRatio,
            MeasureArg::Rd => CausalMeasure::RiskDifference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    Memory,
    Files,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Causal measure.
    #[arg(long, value_enum)]
    pub measure: Option<MeasureArg>,
    /// Comma-separated estimators (MR1, MR2, DR-t, FWMR1, FSMR1).
    #[arg(long)]
    pub estimators: Option<String>,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Bootstrap replicates for the selective estimator.
    #[arg(long = "B")]
    pub b: Option<usize>,
    /// Comma-separated selection thresholds in (0, 1], increasing.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated penalty levels; default {0, n^0.3, n^0.4, n^0.45}.
    #[arg(long = "lambda-grid")]
    pub lambda_grid: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Built-in scenario id (1.1, 1.2, 2.1, 2.2, 2.3) or a TOML/JSON file.
    #[arg(long)]
    pub scenario: String,
    /// Monte Carlo replicates.
    #[arg(long = "M", default_value_t = 200)]
    pub m: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Target site CSV (`y,a,x1..xp`), or a directory of `site_<k>.csv` files.
    #[arg(long)]
    pub target: PathBuf,
    /// Comma-separated source site CSVs, numbered 1.. in the order given.
    #[arg(long, value_delimiter = ',')]
    pub sources: Vec<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FedRunArgs {
    /// Target site directory holding one CSV.
    #[arg(long)]
    pub target: PathBuf,
    /// Comma-separated source site directories, numbered 1.. in order.
    #[arg(long, value_delimiter = ',')]
    pub sources: Vec<PathBuf>,
    /// Message transport.
    #[arg(long, value_enum, default_value = "files")]
    pub transport: TransportArg,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnsupportedMeasureForMode { .. } | Error::EmptyGrid | Error::UnknownTarget(_) => {
            EXIT_USAGE
        }
        Error::Schema { .. }
        | Error::InvalidObservation(_)
        | Error::DimensionMismatch { .. }
        | Error::EmptySite(_)
        | Error::MissingTargetSite => EXIT_DATA,
        Error::ProtocolViolation(_) => EXIT_PROTOCOL,
        Error::Io(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a).map(|_| EXIT_OK),
        Command::FedRun(a) => cmd_fed_run(a).map(|_| EXIT_OK),
        Command::MseCurve(a) => cmd_mse_curve(a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
