//! `ensemble`: train n-gram models, run ensemble generation, check CE/ME
//! equivalence, decompose mixtures and benchmark decoding strategies.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ensemble_core::predictors::Tokenization;
use ensemble_core::TopK;

use crate::config::StrategyName;

#[derive(Debug, Parser)]
#[command(name = "ensemble", version, about = "Ensemble decoding for token predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an n-gram model from a text corpus.
    Train(TrainArgs),
    /// Generate a continuation and write a step trace plus summary.
    Generate(GenerateArgs),
    /// Compare analytic CE distributions against sampled ME first tokens.
    Equivalence(EquivalenceArgs),
    /// Split a combined distribution into (1 − λ)·C' + λ·p.
    Decompose(DecomposeArgs),
    /// Run CE and ME on the same ensemble and report simulated speed.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = Tokenization::Char)]
    pub tokenization: Tokenization,
    /// JSON token list fixing the model vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides shared by every config-driven subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_k: Option<TopK>,
    /// Ensemble weights, one per model.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyName>,
    /// Model index for `--strategy single`.
    #[arg(long)]
    pub model: Option<usize>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub samples: Option<usize>,
    /// File with one prefix per line.
    #[arg(long)]
    pub prefixes: Option<PathBuf>,
    /// ME weights, when deliberately different from `--lambda`.
    #[arg(long, value_delimiter = ',')]
    pub sample_lambda: Option<Vec<f64>>,
    /// Sweep λ over a grid for a two-model ensemble.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tv_threshold: Option<f64>,
    #[arg(long)]
    pub p_floor: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Combined distribution C: a JSON array or a file holding one.
    #[arg(long)]
    pub combined: String,
    /// Base distribution p: a JSON array or a file holding one.
    #[arg(long)]
    pub base: String,
    /// Mixture weight of the base; defaults to the largest feasible value.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Equivalence(a) => commands::equivalence(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
