use std::path::PathBuf;

use branchstance::family::ModelFamily;
use branchstance::ingest::Granularity;
use branchstance::thread::{ContextLimit, Repair};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "branchstance", version, about = "Stance detection over conversation threads")]
pub struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, clean and deduplicate raw records into a dataset.
    Ingest(IngestArgs),
    /// Split a dataset into train and test files.
    Split(SplitArgs),
    /// Print per-depth and label statistics of a dataset.
    Stats(StatsArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a test set.
    Eval(EvalArgs),
    /// Train and score one family over several seeds.
    Experiment(ExperimentArgs),
    /// Context-limit sweep of the full model.
    Sweep(SweepArgs),
    /// Occlusion attribution for one target instance.
    Attribute(AttributeArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Merge final contextual-round labels into a dataset.
    Finalize(FinalizeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub keywords: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep this many threads at random after filtering.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// What to do with comments whose parent is missing: reject or promote.
    #[arg(long, default_value = "reject")]
    pub repair: Repair,
    /// Source name recorded in provenance (default: input file name).
    #[arg(long)]
    pub source: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value = "thread")]
    pub granularity: Granularity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Default: `<input stem>.train.jsonl` beside the input.
    #[arg(long)]
    pub train_out: Option<PathBuf>,
    /// Default: `<input stem>.test.jsonl` beside the input.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Flags that override the config file.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_batches: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Training log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Word list for segmentation.
    #[arg(long)]
    pub word_list: Option<PathBuf>,
    /// Static word vectors for textcnn and tan.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: ModelFamily,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub model: ModelFamily,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated context limits, e.g. `0,1,2,inf`.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,inf")]
    pub ks: Vec<ContextLimit>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset holding the thread.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub thread: String,
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel workers for span occlusion (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub word_list: Option<PathBuf>,
    /// Also print a plain-text table.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Append-only label log; replayed on start.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "default")]
    pub project: String,
    #[arg(long, default_value_t = 3)]
    pub quota: usize,
    /// Bearer token required on every request.
    #[arg(long, env = "BRANCHSTANCE_TOKEN")]
    pub token: Option<String>,
    /// Model used to compute attribution reports on request.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Directory of precomputed `<instance_id>.json` attribution reports.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinalizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// JSON object mapping instance id to label for unresolved instances.
    #[arg(long)]
    pub adjudications: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub quota: usize,
}
