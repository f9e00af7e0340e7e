//! `synthforge`: train, generate, evaluate and augment.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "synthforge", version, about = "Self-attention GAN toolkit for small labeled image sets")]
struct Cli {
    /// Catalog database file [env: SYNTHFORGE_DB] [default: synthforge.sqlite]
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Object store root for generated images [env: SYNTHFORGE_STORE] [default: store]
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expand a dataset, train a GAN on it and register the final model.
    Train(TrainArgs),
    /// Sample images from a cataloged model and record them.
    #[command(after_help = "COUNT comes first and MODEL_ID second: `generate 1000 5` makes 1000 images with model 5. \
A trailing period on the count, as in `generate 1000. 5`, is accepted and ignored.")]
    Generate(GenerateArgs),
    /// Score a cataloged model with FID and Inception Score.
    Evaluate(EvaluateArgs),
    /// Grow a dataset with label-preserving affine copies and write it out.
    Augment(AugmentArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset root with one subdirectory per class.
    #[arg(long)]
    data: PathBuf,
    /// Train on one class only; all classes are pooled when omitted.
    #[arg(long)]
    class: Option<String>,
    /// Output directory for checkpoints and metrics.csv.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// `key = value` training config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// total_iters
    #[arg(long)]
    iters: Option<String>,
    /// eval_every_M (0 disables evaluation)
    #[arg(long)]
    eval_every: Option<String>,
    /// batch_size
    #[arg(long)]
    batch: Option<String>,
    /// seed
    #[arg(long)]
    seed: Option<String>,
    /// g_lr
    #[arg(long)]
    g_lr: Option<String>,
    /// d_lr
    #[arg(long)]
    d_lr: Option<String>,
    /// eval_sample_count
    #[arg(long)]
    eval_samples: Option<String>,
    /// checkpoint_every (0 writes only the final checkpoint)
    #[arg(long)]
    checkpoint_every: Option<String>,
    /// extractor: inception or toy
    #[arg(long)]
    extractor: Option<String>,
    /// extractor_weights [env: SYNTHFORGE_EXTRACTOR_WEIGHTS]
    #[arg(long)]
    extractor_weights: Option<String>,
    /// augment_target (0 or at most the dataset size skips expansion)
    #[arg(long)]
    augment_target: Option<String>,
    /// base_ch
    #[arg(long)]
    base_ch: Option<String>,
    /// resolution
    #[arg(long)]
    resolution: Option<String>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Number of images to create.
    #[arg(value_parser = parse_count)]
    count: usize,
    /// Catalog id of the model; the most recently added model when omitted.
    model_id: Option<i64>,
    /// Latent sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Catalog id of the model; the most recently added model when omitted.
    #[arg(long)]
    model: Option<i64>,
    /// Real images, one subdirectory per class.
    #[arg(long)]
    data: PathBuf,
    /// Restrict the real set to one class; defaults to the model's class.
    #[arg(long)]
    class: Option<String>,
    /// Generated images to score.
    #[arg(long, default_value_t = 2048)]
    samples: usize,
    /// inception or toy
    #[arg(long, default_value = "inception")]
    extractor: String,
    #[arg(long)]
    extractor_weights: Option<PathBuf>,
    /// Inception Score splits; 0 picks 10 for at least 1000 samples, else 1.
    #[arg(long, default_value_t = 0)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Total number of images after expansion.
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Expected image side length.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
}

/// Positive integer, tolerating one trailing period (`1000.`).
fn parse_count(s: &str) -> Result<usize, String> {
    let n: usize = s.strip_suffix('.').unwrap_or(s).parse().map_err(|_| format!("{s:?} is not a positive integer"))?;
    if n == 0 {
        return Err("count must be at least 1".into());
    }
    Ok(n)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env = commands::Locations::resolve(cli.catalog, cli.store);
    let result = match cli.command {
        Command::Train(a) => commands::train(a, &env),
        Command::Generate(a) => commands::generate(a, &env),
        Command::Evaluate(a) => commands::evaluate(a, &env),
        Command::Augment(a) => commands::augment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
