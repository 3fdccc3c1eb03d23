use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ghsnet_core::{MomentMode, DEFAULT_EDGE_THRESHOLD};

#[derive(Debug, Parser)]
#[command(
    name = "ghsnet",
    version,
    about = "Graphical horseshoe network estimation"
)]
pub struct Cli {
    /// Worker threads for replicates, bootstrap samples and per-network
    /// selection (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scale-free networks and Gaussian data sets.
    Simulate(SimulateArgs),
    /// Fit one network from a CSV file.
    Fit(FitArgs),
    /// Fit several networks jointly, one CSV file each.
    FitJoint(FitJointArgs),
    /// Run a simulation study and write a CSV report.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Networks per replicate; networks 2..k perturb network 1.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Fraction of network 1's edges moved in each other network.
    #[arg(long, default_value_t = 0.0)]
    pub disagreement: f64,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Lower end of the partial correlation magnitudes.
    #[arg(long, default_value_t = 0.1)]
    pub partial_low: f64,
    #[arg(long, default_value_t = 0.2)]
    pub partial_high: f64,
    /// Give off-diagonal partial correlations random signs.
    #[arg(long)]
    pub mixed_signs: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TauModeArg {
    Fixed,
    Updated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MomentArg {
    Paper,
    Invgamma,
}

impl From<MomentArg> for MomentMode {
    fn from(m: MomentArg) -> Self {
        match m {
            MomentArg::Paper => MomentMode::PaperPrinted,
            MomentArg::Invgamma => MomentMode::InvGammaMoment,
        }
    }
}

/// Estimation settings shared by the fitting commands.
#[derive(Debug, Args)]
pub struct EstimationArgs {
    /// Fixed global scale; without it, `tau^2` is chosen by AIC.
    #[arg(long)]
    pub tau_sq: Option<f64>,
    /// `updated` re-estimates `tau^2` every iteration from `--tau-sq`
    /// (default 1). Diagnostic only.
    #[arg(long, value_enum, default_value = "fixed")]
    pub tau_mode: TauModeArg,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// AIC change below which the grid search counts as stabilised.
    #[arg(long, default_value_t = 0.1)]
    pub aic_epsilon: f64,
    /// Partial correlations at or below this magnitude are not edges.
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    pub edge_threshold: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with a header row of variable names and one row per sample.
    pub input: PathBuf,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// Truth JSON written by `simulate`; adds precision and recall.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Scale every column to unit variance before fitting.
    #[arg(long)]
    pub scale: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitJointArgs {
    /// One CSV per network, all with the same header.
    #[arg(required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[arg(long, value_enum, default_value = "paper")]
    pub moment_mode: MomentArg,
    /// Check every network's joint estimate against single-network
    /// Bayesian bootstrap draws.
    #[arg(long)]
    pub bootstrap_check: bool,
    #[arg(long, default_value_t = 100)]
    pub bootstrap_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Truth JSON per network, in input order.
    #[arg(long, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    #[arg(long)]
    pub scale: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// table1, table2, joint_vs_single or auprc.
    pub scenario: String,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub disagreement: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.1)]
    pub aic_epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
    pub edge_threshold: f64,
    #[arg(long, value_enum, default_value = "paper")]
    pub moment_mode: MomentArg,
    #[arg(long, default_value_t = 0.1)]
    pub partial_low: f64,
    #[arg(long, default_value_t = 0.2)]
    pub partial_high: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}
