//! Command-line front end: synthetic data generation, training, protocol
//! evaluation with baselines, and scoring from a checkpoint.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mehpan",
    about = "Vascular-risk sequence classifiers over symbolic medical histories",
    version
)]
struct Cli {
    /// Optional TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic patient records with a planted class signal.
    Generate(GenerateArgs),
    /// Train one model on a single stratified 80/20 split.
    Train(TrainArgs),
    /// Run the ten-split protocol for one or more model configs plus baselines.
    Eval(EvalArgs),
    /// Score records with a trained checkpoint.
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of patients.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Planted signal strength in [0, 1].
    #[arg(long)]
    signal: Option<f64>,
    /// Diagnosis code vocabulary size.
    #[arg(long)]
    diag_vocab: Option<usize>,
    /// Medication code vocabulary size.
    #[arg(long)]
    med_vocab: Option<usize>,
    #[arg(long)]
    min_diag_len: Option<usize>,
    #[arg(long)]
    max_diag_len: Option<usize>,
    #[arg(long)]
    max_med_len: Option<usize>,
    /// Output records file (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input records file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Architecture: rnn or conv.
    #[arg(long)]
    arch: Option<String>,
    /// Time reduction for conv: sum, wsum, or last.
    #[arg(long)]
    reduce: Option<String>,
    /// Checkpoint output path; vocab and log files derive from it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    aux_hidden: Option<usize>,
    #[arg(long)]
    diag_embed: Option<usize>,
    #[arg(long)]
    med_embed: Option<usize>,
    #[arg(long)]
    attn_hidden: Option<usize>,
    #[arg(long)]
    dense1: Option<usize>,
    #[arg(long)]
    dense2: Option<usize>,
    #[arg(long)]
    conv_width: Option<usize>,
    #[arg(long)]
    conv_layers: Option<usize>,
    #[arg(long)]
    max_diag_len: Option<usize>,
    #[arg(long)]
    max_med_len: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Input records file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model specs: rnn, conv:sum, conv:wsum, conv:last. Repeatable.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Output prefix for report and table files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    max_diag_len: Option<usize>,
    #[arg(long)]
    max_med_len: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Records to score.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output scores file (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vocabulary files from the training run; default to
    /// <checkpoint>.diag-vocab.tsv / <checkpoint>.med-vocab.tsv.
    #[arg(long)]
    diag_vocab: Option<PathBuf>,
    #[arg(long)]
    med_vocab: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let file = match config::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(args, &file.generate),
        Command::Train(args) => commands::train(args, &file.train),
        Command::Eval(args) => commands::eval(args, &file.eval),
        Command::Predict(args) => commands::predict(args, &file.predict),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
