//! `discval` command-line front end.
//!
//! Exit codes: 0 when a run completes (whatever the verdict), 2 for usage,
//! input and configuration errors, 1 when a computation fails. Errors are
//! also written to stderr as one line of JSON.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{LossArg, ModeArg, MultiModeArg, OnOff, WilcoxonArg};

#[derive(Debug, Parser)]
#[command(name = "discval", version, about = "Discriminant-validity falsification tests for predictive scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test one permissible outcome against an impermissible one.
    FalsifySingle(SingleArgs),
    /// Conditional rank test against one or more permissible outcomes.
    FalsifyMulti(MultiArgs),
    /// AUC, AU-PR, MSE and top-k% tables per outcome.
    Metrics(MetricsArgs),
    /// Run a pre-registered family of hypotheses.
    Plan(PlanArgs),
    /// Monte-Carlo Type-I/power experiments and ablation grids.
    Simulate(SimulateArgs),
}

/// Data, split and output options shared by the data-driven commands.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// CSV file with a score column and one 0/1 column per outcome.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Name of the score column [default: score].
    #[arg(long, value_name = "NAME")]
    pub score_col: Option<String>,
    /// Column assigning rows to `calibration` or `evaluation`; otherwise rows are split at random.
    #[arg(long, value_name = "NAME")]
    pub role_col: Option<String>,
    /// Share of rows used for calibration when splitting at random [default: 0.5].
    #[arg(long, value_name = "R")]
    pub cal_fraction: Option<f64>,
    /// Master seed; drawn and printed when absent.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// TOML file with defaults for any of these flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides DISCVAL_OUT_DIR and the config file).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Timestamp recorded in the run manifest [default: SOURCE_DATE_EPOCH, else none].
    #[arg(long, value_name = "TEXT")]
    pub timestamp: Option<String>,
}

/// Test options shared by both falsification commands.
#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    /// Significance level [default: 0.05].
    #[arg(long, value_name = "R")]
    pub alpha: Option<f64>,
    /// Loss function [default: log].
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Fit Platt scaling per outcome; `off` reads scores as probabilities [default: on].
    #[arg(long, value_enum)]
    pub calibrate: Option<OnOff>,
    /// Also write the per-record loss matrix.
    #[arg(long)]
    pub export_losses: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SingleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long, value_name = "NAME")]
    pub permissible: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub impermissible: Option<String>,
    /// Test on the loss differences [default: auto].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Signed-rank null distribution [default: auto, exact up to 50 nonzero differences].
    #[arg(long, value_enum)]
    pub wilcoxon: Option<WilcoxonArg>,
}

#[derive(Debug, Clone, Args)]
pub struct MultiArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub test: TestArgs,
    /// Permissible outcome; repeat for each.
    #[arg(long, value_name = "NAME")]
    pub permissible: Vec<String>,
    #[arg(long, value_name = "NAME")]
    pub impermissible: Option<String>,
    /// Permutation null or normal approximation [default: perm].
    #[arg(long, value_enum)]
    pub multi_mode: Option<MultiModeArg>,
    /// Permutation replicates B [default: 9999].
    #[arg(long, value_name = "B")]
    pub permutations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Permissible outcome; repeat for each.
    #[arg(long, value_name = "NAME")]
    pub permissible: Vec<String>,
    /// Impermissible outcome; repeat for each.
    #[arg(long, value_name = "NAME")]
    pub impermissible: Vec<String>,
    /// Top-k percentages for PPV and TNR [default: 2,10,50,75].
    #[arg(long, value_name = "K", value_delimiter = ',')]
    pub k: Vec<f64>,
    /// Compute metrics on Platt-calibrated probabilities [default: on].
    #[arg(long, value_enum)]
    pub calibrate: Option<OnOff>,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// TOML test plan.
    #[arg(long, value_name = "FILE")]
    pub plan: PathBuf,
    /// Overrides the plan's seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "TEXT")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML simulation spec.
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    /// Overrides the simulation file's master seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the number of trials.
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "TEXT")]
    pub timestamp: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::FalsifySingle(a) => commands::falsify_single(a),
        Command::FalsifyMulti(a) => commands::falsify_multi(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Plan(a) => commands::plan(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let error::CliError::Usage(msg) = &e {
                eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            }
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
