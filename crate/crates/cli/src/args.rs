use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use robust_rank::data::Role;

#[derive(Debug, Parser)]
#[command(name = "robust-rank", version, about = "Persona query rewriting and robust ranking experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Flat TOML file of key = value settings. Flags win over the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite each query once per persona.
    Rewrite(RewriteArgs),
    /// Score existing rewrites on a 0 to 5 scale.
    Judge(JudgeArgs),
    /// Train a ranking head and evaluate it on held-out queries.
    Train(TrainArgs),
    /// Compute effectiveness and robustness metrics.
    Eval(EvalArgs),
    /// Run the four ablation modes on one split.
    Ablate(ExperimentArgs),
    /// Train one full model per robustness weight.
    Sweep(SweepArgs),
    /// Write a synthetic dataset.
    GenSynth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API token.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Extra attempts per step after a failed or unparseable response.
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RewriteArgs {
    /// `qid<TAB>text` per line.
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub max_iters: Option<u32>,
    /// Accept only when both checks score 1.
    #[arg(long)]
    pub strict: bool,
    /// Personas to rewrite for (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_role)]
    pub roles: Option<Vec<Role>>,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// rewrites.jsonl from the rewrite command.
    #[arg(long)]
    pub rewrites: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Pair embeddings JSONL. Without it a synthetic dataset is generated.
    #[arg(long, requires = "qrels")]
    pub embeddings: Option<PathBuf>,
    /// TREC qrels.
    #[arg(long, requires = "embeddings")]
    pub qrels: Option<PathBuf>,
    /// Number of relevance levels (3 or 5).
    #[arg(long)]
    pub levels: Option<u32>,
    /// Seed of the generated dataset when no files are given.
    #[arg(long)]
    pub synth_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    /// Fraction of queries held out for evaluation.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// One of full, no_robust_loss, no_mmoe, neither.
    #[arg(long)]
    pub mode: Option<String>,
    /// symmetrized_kl or mixture_js.
    #[arg(long)]
    pub divergence: Option<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_role)]
    pub roles: Option<Vec<Role>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// NDCG cutoffs for the held-out report.
    #[arg(long = "n", value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// NDCG cutoff.
    #[arg(long = "n")]
    pub cutoff: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TREC run files, one per role in --roles order.
    #[arg(long, num_args = 1.., conflicts_with = "checkpoint")]
    pub runs: Vec<PathBuf>,
    /// checkpoint.json from train; scores --embeddings instead of reading runs.
    #[arg(long, requires = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub levels: Option<u32>,
    #[arg(long = "n", value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_role)]
    pub roles: Option<Vec<Role>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub num_queries: Option<usize>,
    #[arg(long)]
    pub docs_per_query: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub levels: Option<u32>,
}

fn parse_role(s: &str) -> Result<Role, String> {
    s.parse()
}
