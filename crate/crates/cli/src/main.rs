//! `parexp`: simulate parallel advertiser experiments and estimate their
//! interference-aware treatment effects.
//!
//! Exit codes: 0 success, 1 a replicate check failed, 2 bad configuration or
//! arguments, 3 identification failure, 4 I/O or file-format error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parexp::Error;

#[derive(Debug, Parser)]
#[command(name = "parexp", version, about = "Parallel advertiser experimentation toolkit")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an experiment: exposure log, outcomes and oracle ATEs.
    Simulate(SimulateArgs),
    /// Estimate degenerate ATEs for one focal campaign.
    Estimate(EstimateArgs),
    /// Prospective ATEs, competitor curves, surfaces and scenario curves.
    Calculus(CalculusArgs),
    /// Randomization, balance, log and heterogeneity diagnostics.
    Diagnose(DiagnoseArgs),
    /// Run a built-in scaled-down reproduction and report pass/fail.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "PAREXP_OUT")]
    out: PathBuf,
    /// Gzip the exposure log and outcome files.
    #[arg(long)]
    gzip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Cells,
    Kernel,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SampleArg {
    Eligible,
    All,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    focal: u32,
    #[arg(long, value_enum, default_value_t = MethodArg::Cells)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = SampleArg::Eligible)]
    sample: SampleArg,
    /// Training share for bandwidth selection; 0 uses the full sample for both.
    #[arg(long, default_value_t = 0.1)]
    split: f64,
    /// Fixed common bandwidth instead of cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum users per arm below which a cell is flagged LOW_SUPPORT.
    #[arg(long, default_value_t = parexp::estimators::DEFAULT_MIN_ARM)]
    min_cell: usize,
    /// Rival campaign for `--method interaction`.
    #[arg(long)]
    rival: Option<u32>,
    /// Seed for the train/estimate split and CV starts (default: the run seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the input directory).
    #[arg(long, env = "PAREXP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AveragingArg {
    Unweighted,
    Beliefs,
}

#[derive(Debug, Args)]
struct CalculusArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    focal: u32,
    /// ATE table (default: `<input>/ate_<focal>.csv`).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Partition label (default: the partition with the most users).
    #[arg(long)]
    partition: Option<usize>,
    #[arg(long, default_value_t = parexp::calculus::DEFAULT_SIGMA)]
    sigma: f64,
    /// Grid points on [0, 1] for curves and surfaces.
    #[arg(long, default_value_t = 11)]
    grid: usize,
    #[arg(long, value_enum, default_value_t = AveragingArg::Unweighted)]
    averaging: AveragingArg,
    /// Divide competitor curves by their largest absolute value.
    #[arg(long)]
    normalize: bool,
    #[arg(long, env = "PAREXP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Minimum users per arm combination for the full-support check.
    #[arg(long, default_value_t = parexp::design::DEFAULT_MIN_CELL)]
    min_cell: usize,
    /// Also summarize heterogeneity of this campaign's ATE table.
    #[arg(long)]
    focal: Option<u32>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, env = "PAREXP_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplicateArgs {
    /// One of: two_firm, overlap_table, balance.
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "PAREXP_OUT")]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) => 2,
        Error::NotIdentified(_) | Error::Refused(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
