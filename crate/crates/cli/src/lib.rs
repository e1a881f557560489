//! The `cled` command line: sweeps, single injections, dataset synthesis and
//! the detector lifecycle (features, train, predict, roc).
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

pub mod commands;
pub mod table;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    std::io::Error,
    csv::Error,
    serde_json::Error,
    cled::corpus::CorpusError,
    cled::forest::ForestError,
    cled::campaign::CampaignError,
    cled::minixformer::ModelError,
    cled::floatbits::FloatBitsError
);

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cled", version, about = "Soft-error injection and linguistic error detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded toy transformer parameter file.
    InitModel(InitModelArgs),
    /// Sweep single-bit flips over bit positions; emits a CSV and a critical-bit report.
    Sweep(SweepArgs),
    /// Flip one bit of one parameter and show the regenerated outputs.
    Inject(InjectArgs),
    /// Build a labeled dataset from random injections into the toy model.
    ErrorDataset(ErrorDatasetArgs),
    /// Synthesize clean and corrupted samples from the clean corpus.
    Simulate(SimulateArgs),
    /// Adapt an external labeled dataset (JSONL, JSON array or CSV) to sample JSONL.
    Ingest(IngestArgs),
    /// Stratified train/test split of a sample file.
    Split(SplitArgs),
    /// Extract the sixteen linguistic features of each sample.
    Features(FeaturesArgs),
    /// Train the forest detector on a feature CSV.
    Train(TrainArgs),
    /// Score a feature CSV with a trained forest.
    Predict(PredictArgs),
    /// ROC points of a trained forest over a labeled feature CSV.
    Roc(RocArgs),
    /// Simulate or inject, then featurize, split, train and compute the ROC.
    E2e(E2eArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Parameter file; a seeded toy model is built when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Toy model variant (opus or t5).
    #[arg(long, default_value = "t5")]
    pub variant: String,
    #[arg(long, default_value_t = 7)]
    pub model_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Number of seeded random input sequences.
    #[arg(long, default_value_t = 20)]
    pub inputs: usize,
    #[arg(long, default_value_t = 1)]
    pub input_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct InitModelArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated bit positions (0 = sign, 1-8 exponent, 9-31 fraction); all by default.
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<u32>>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Extend each position until this many trials are relevant.
    #[arg(long)]
    pub min_relevant: Option<usize>,
    /// Cap on trials per position with --min-relevant.
    #[arg(long, default_value_t = 10_000)]
    pub max_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// rouge1, bleu or exact_match_rate.
    #[arg(long, default_value = "rouge1")]
    pub metric: String,
    /// A position is critical when its mean score drops below (1 - degradation) of the baseline.
    #[arg(long, default_value_t = 0.2)]
    pub degradation: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for sweep.csv, injections.jsonl, critical.json and run_config.json.
    /// The CSV goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InjectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub index: usize,
    #[arg(long)]
    pub position: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct ErrorDatasetArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 10)]
    pub relevant_errors: usize,
    #[arg(long, default_value_t = 100_000)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub clean: usize,
    #[arg(long, default_value_t = 1000)]
    pub corrupt: usize,
    /// Weights of fixed_string, random_similar_strings, grammar_repetition.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub mix: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Local file to adapt.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Download this URL first (requires --allow-network and a `curl` binary).
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub allow_network: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    /// Sample JSONL file.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as plain text, one unlabeled sample per line.
    #[arg(long)]
    pub text_lines: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForestArgs {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// sqrt, all, or a count.
    #[arg(long)]
    pub max_features: Option<String>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
    #[arg(long)]
    pub max_leaf_nodes: Option<usize>,
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Candidate tree counts for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub grid_trees: Option<Vec<usize>>,
    /// Candidate depths for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub grid_depth: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Overrides the threshold stored in the model.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output CSV (index,proba,verdict[,label]); stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RocArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 101)]
    pub thresholds: usize,
    /// ROC CSV; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Plot-ready JSON with fpr/tpr arrays and the AUC.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct E2eArgs {
    /// synthetic (clean corpus + corruptor) or toy-injection (error dataset from the toy model).
    #[arg(long, default_value = "toy-injection")]
    pub source: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 10)]
    pub relevant_errors: usize,
    #[arg(long, default_value_t = 1000)]
    pub clean: usize,
    #[arg(long, default_value_t = 1000)]
    pub corrupt: usize,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[arg(long, default_value_t = 101)]
    pub thresholds: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
