use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "fzsl",
    version,
    about = "Federated zero-shot learning simulator"
)]
pub struct Cli {
    /// Flat `key = value` config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `global_seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = MetricsFormat::Text)]
    pub metrics_format: MetricsFormat,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricsFormat {
    /// `key=value` lines.
    Text,
    /// One JSON object per line.
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    GenData(GenDataArgs),
    /// Run a federation and write metrics and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint's generator on the unseen classes.
    Eval(EvalArgs),
    /// Run a grid of trainings described by a plan file.
    Sweep(SweepArgs),
    /// Gradient-leakage inversion against a critic and a classifier.
    Attack(AttackArgs),
    /// Partition sizes and label skew.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 20)]
    pub seen: usize,
    #[arg(long, default_value_t = 5)]
    pub unseen: usize,
    #[arg(long, default_value_t = 16)]
    pub attr_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 50)]
    pub rows_per_class: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_scale: f64,
    /// Also write `classes.embed` with pseudo-embeddings of this width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with train.features, test.features, classes.attrs, split.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// Embedding table; pseudo-embeddings are used when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate every this many rounds; overrides `eval_every`.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Record per-round wall time; makes metrics non-reproducible.
    #[arg(long)]
    pub wall_time: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Overrides `synth_per_class`.
    #[arg(long)]
    pub synth_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Dataset directory; each cell generates the default synthetic fixture
    /// from its own seed when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Attack a client critic from this checkpoint (needs `--data`); without
    /// it a fresh toy critic is attacked.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub client: usize,
    /// Training row whose gradients leak.
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides `num_clients`.
    #[arg(long)]
    pub clients: Option<usize>,
}
