//! `mmlink`: synthesize, preprocess, train, evaluate and score record pairs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod prep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mmlink", version, about = "Multi-modal record linkage pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus in the ingestion formats.
    Synth(SynthArgs),
    /// Normalize, build the vocabulary, encode, filter and split.
    Preprocess(PreprocessArgs),
    /// Train a baseline, pointwise or san model.
    Train(TrainArgs),
    /// Score a split and write AP, PR curve and length buckets.
    Evaluate(EvaluateArgs),
    /// Score ad-hoc pairs.
    Predict(PredictArgs),
    /// Train several configurations and tabulate their best epochs.
    Grid(GridArgs),
    /// Retrain one configuration under several seeds.
    Seeds(SeedsArgs),
    /// Compare several models on one split.
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_items: usize,
    #[arg(long, default_value_t = 5000)]
    n_pairs: usize,
    #[arg(long, default_value_t = 0.33)]
    positive_ratio: f64,
    /// Size of the pseudo-word lexicon.
    #[arg(long, default_value_t = 500)]
    lexicon: usize,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    /// Also write a regional store `regions.bin` with this many regions.
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long, default_value_t = 16)]
    region_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = Mode::Shared)]
    interaction_mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Shared,
    Xor,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Global image features keyed by image id.
    #[arg(long)]
    features: PathBuf,
    /// Optional regional image features keyed by image id.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = mmlink::dataset::DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    #[arg(long, default_value_t = mmlink::dataset::DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Words (one per line) removed after normalization.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Baseline,
    Pointwise,
    San,
}

/// Hyperparameter flags; each overrides the config file and the defaults.
#[derive(Args, Default, Clone)]
struct ModelFlags {
    /// `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cell: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hid: Option<usize>,
    #[arg(long)]
    fs_out: Option<usize>,
    #[arg(long)]
    fc1: Option<usize>,
    #[arg(long)]
    fc2: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without improvement before stopping, or `none`.
    #[arg(long)]
    patience: Option<String>,
    /// `sgd` or `adam`.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    gru_bias: bool,
    #[arg(long)]
    fusion_tanh: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    variant: Variant,
    /// Preprocessed directory.
    #[arg(long)]
    prep: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pretrained word vectors (text format, one word per line); frozen.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Jaccard tokens for the baseline.
    #[arg(long, default_value = "vocab")]
    tokens: String,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint or baseline model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prep: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Append the 11-bucket length table to the report and write buckets.csv.
    #[arg(long)]
    buckets: bool,
    /// Write per-record attention weights (san models).
    #[arg(long)]
    export_attention: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    prep: PathBuf,
    /// CSV with `id_a,id_b` columns (extra columns ignored).
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    prep: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One `key=value` file per configuration.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
}

#[derive(Args)]
struct SeedsArgs {
    #[arg(value_enum)]
    variant: Variant,
    #[arg(long)]
    prep: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[command(flatten)]
    flags: ModelFlags,
}

#[derive(Args)]
struct CompareArgs {
    /// `name=path` of a checkpoint or baseline model; repeat per model.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long)]
    prep: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use mmlink::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mmlink::Error>() {
            return match e {
                E::NonFiniteLoss { .. } => 3,
                E::Config(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Grid(a) => commands::grid(a),
        Command::Seeds(a) => commands::seeds(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
