use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bet",
    version,
    about = "Bayesian ensemble trees: fit, predict and inspect"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulation or heterogeneous-regression dataset as CSV.
    Simulate(SimulateArgs),
    /// Run the sampler on a CSV dataset.
    Fit(FitArgs),
    /// Predict rows of a CSV dataset from a saved snapshot.
    Predict(PredictArgs),
    /// Write the variable ranking of a saved snapshot.
    Rank(RankArgs),
    /// Summarize a trace into plot-ready tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation study 1, 2 or 3.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with = "heterogeneous")]
    pub study: Option<u8>,
    /// Longitudinal data from two latent partition schemes.
    #[arg(long, required_unless_present = "study")]
    pub heterogeneous: bool,
    #[arg(long, default_value_t = 1000)]
    pub subjects: usize,
    /// Entries per subject.
    #[arg(long, default_value_t = 10)]
    pub entries: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Continuous,
    Categorical,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, value_enum, default_value_t = Kind::Continuous)]
    pub kind: Kind,
    /// Number of classes; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Column holding integer subject ids.
    #[arg(long)]
    pub subject_column: Option<String>,
    /// Columns to leave out of the covariates (repeatable).
    #[arg(long = "ignore")]
    pub ignore: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// TOML file with chain settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub depth_cap: Option<u32>,
    /// Tree sweeps per clustering step.
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Clusters the rows are spread over at the start.
    #[arg(long)]
    pub init_clusters: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fit one tree to all rows (no clustering).
    #[arg(long)]
    pub single_tree: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Weighted average over clusters.
    Ensemble,
    /// Use the cluster given in a column of the input.
    Cluster,
    /// Pick each subject's cluster from its first entries.
    Subject,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Ensemble)]
    pub mode: Mode,
    #[arg(long, default_value = "cluster")]
    pub cluster_column: String,
    #[arg(long, default_value = "subject")]
    pub subject_column: String,
    /// Entries per subject revealed to choose its cluster (subject mode).
    #[arg(long, default_value_t = 1)]
    pub revealed: usize,
    /// Columns to leave out of the covariates (repeatable).
    #[arg(long = "ignore")]
    pub ignore: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}
