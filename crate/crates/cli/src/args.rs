use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "seqagg", version, about = "Aggregate sequence labels from many unreliable taggers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice (vote ties, schedules, simulation).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for data-parallel inference (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Write the run manifest here instead of to stderr.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Comma-separated entity types, in label order (default: inferred from inputs).
    #[arg(long, global = true, value_delimiter = ',')]
    pub types: Option<Vec<String>>,

    /// Rewrite invalid IOB2 in inputs instead of rejecting them.
    #[arg(long, global = true)]
    pub repair_inputs: bool,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Source prediction files: one two-column file per source (id = file
    /// stem), or a single multi-column file.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,

    /// Layer names for a multi-column input (`gold` marks the gold layer).
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mv,
    Bea,
    Bea2,
    BeaSup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Token,
    Entity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Combine source predictions into one labelling.
    Aggregate(AggregateArgs),
    /// Score sources against a small gold set and derive mixture weights.
    Rank(RankArgs),
    /// Train a tagger on per-batch sampled source labels.
    Distill(DistillArgs),
    /// Continue training a tagger on gold sentences.
    Finetune(FinetuneArgs),
    /// Entity-level precision, recall and F1 against gold.
    Score(ScoreArgs),
    /// Generate a synthetic multi-source corpus with known truth.
    Simulate(SimulateArgs),
    /// Rewrite invalid IOB2 sequences to valid ones.
    Repair(RepairArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub sources: SourceArgs,

    #[arg(long, value_enum, default_value_t = MethodArg::Bea)]
    pub method: MethodArg,

    #[arg(long, value_enum, default_value_t = GranularityArg::Entity)]
    pub granularity: GranularityArg,

    /// Dirichlet concentration of every confusion-matrix row.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,

    /// Dirichlet concentration of the class prior.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,

    /// Stop when the ELBO changes by less than this.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,

    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,

    /// Sources kept by the two-pass method.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,

    /// Count `O` when ranking sources at entity granularity.
    #[arg(long)]
    pub recall_includes_outside: bool,

    /// Gold tags for the leading sentences of the inputs; required by
    /// bea-sup, otherwise used to score the output.
    #[arg(long)]
    pub gold: Option<PathBuf>,

    /// Aggregate CoNLL output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// JSON report with confusions, recalls, ranking and ELBO trace.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub sources: SourceArgs,

    /// Gold tags for the leading sentences of the inputs.
    #[arg(long)]
    pub gold: PathBuf,

    #[arg(long, default_value_t = 10)]
    pub top_k: usize,

    /// JSON output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub sources: SourceArgs,

    /// Mixture weights written by `rank`.
    #[arg(long, conflicts_with_all = ["gold", "uniform"])]
    pub weights: Option<PathBuf>,

    /// Rank on these gold tags (leading sentences) before distilling.
    #[arg(long, conflicts_with = "uniform")]
    pub gold: Option<PathBuf>,

    /// Uniform weights over all sources.
    #[arg(long)]
    pub uniform: bool,

    #[arg(long, default_value_t = 10)]
    pub top_k: usize,

    #[arg(long, default_value_t = 5)]
    pub epochs: usize,

    /// Sentences per batch.
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,

    /// Trained model (JSON).
    #[arg(long)]
    pub out: PathBuf,

    /// Also export the per-epoch supervision and its manifest here.
    #[arg(long)]
    pub silver_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Model written by `distill` or `finetune`.
    #[arg(long)]
    pub model: PathBuf,

    /// Two-column gold file.
    #[arg(long)]
    pub gold: PathBuf,

    #[arg(long, default_value_t = 5)]
    pub epochs: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Two-column gold file.
    #[arg(long)]
    pub gold: PathBuf,

    /// Two-column predictions over the gold tokens.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub pred: Option<PathBuf>,

    /// Model to tag the gold tokens with.
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// JSON output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of tokens (instances).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    /// Number of sources.
    #[arg(long, default_value_t = 5)]
    pub h: usize,

    /// Number of classes, including `O`.
    #[arg(long, default_value_t = 4)]
    pub k: usize,

    /// Sources that label uniformly at random; the rest are reliable.
    #[arg(long, default_value_t = 0)]
    pub spammers: usize,

    /// Accuracy of reliable sources.
    #[arg(long, default_value_t = 0.9)]
    pub diag: f64,

    /// Concentration of the symmetric Dirichlet the class prior is drawn from.
    #[arg(long)]
    pub prior_concentration: Option<f64>,

    #[arg(long, default_value_t = 10)]
    pub sentence_len: usize,

    /// Distinct token strings per class.
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,

    /// Directory receiving gold.conll, one file per source and truth.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    /// CoNLL file with one or more tag columns.
    pub input: PathBuf,

    #[arg(long)]
    pub out: Option<PathBuf>,
}
