//! `ntd`: batch front end for corpus generation, enhancement, training,
//! counting and evaluation. JSON results go to stdout, diagnostics to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ntd_core::Category;

const AFTER_HELP: &str = "\
Exit codes: 0 ok, 1 usage, 2 I/O, 3 validation/contract.
The config file is the JSON form of the pipeline config; without --config the defaults apply.";

#[derive(Parser, Debug)]
#[command(name = "ntd", version, about = "Nuclear track detector counting pipeline", after_help = AFTER_HELP)]
pub struct Cli {
    /// Worker threads for per-frame parallelism (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus (frames, truth sidecars, manifest).
    ///
    /// Prints {"corpus_id", "category", "frames", "manifest"}.
    Gen(GenArgs),
    /// Write the Gaussian and disk masks as PNG images.
    ///
    /// Prints {"gaussian": {spec, sum, path}, "disk": {spec, sum, path}}.
    Masks(MasksArgs),
    /// Compute the response map of one frame.
    ///
    /// Writes response.png (scaled to its maximum) under --out and prints
    /// {"frame", "width", "height", "average_intensity", "max_response", "config_hash", "response_png"}.
    Enhance(EnhanceArgs),
    /// Assign frames to train/test splits in place.
    ///
    /// Prints {"manifest", "train", "test"}.
    Split(SplitArgs),
    /// Serve the annotation API (and UI assets if --ui-dir is given).
    ///
    /// Prints {"listening": "http://ADDR"} once bound, then runs until killed.
    Annotate(AnnotateArgs),
    /// Train the category model from stored annotations.
    ///
    /// Prints {"category", "model", "n_records", "initial_loss", "final_loss", "final_rmse", "final_learning_rate"}.
    Train(TrainArgs),
    /// Count tracks on one frame with a trained model.
    ///
    /// Prints {"threshold", "count", "centroids": [[row, col], ...]}.
    Count(CountArgs),
    /// Train per category and evaluate on the test splits.
    ///
    /// JSON: {"categories": [{category, n_train_frames, n_test_frames, total_true_tracks,
    /// matched, missed, spurious, track_accuracy, frame_exact_rate, train_rmse, frames: [...]}]}.
    Evaluate(EvaluateArgs),
    /// Compare the network against the ratio baseline on test frames.
    ///
    /// JSON: {"category", "k", "rows": [{frame_id, true_count, nn_count, linear_count,
    /// nn_threshold, linear_threshold}], "summary": {nn_better, equal, nn_worse}}.
    Compare(CompareArgs),
    /// Annotate training frames with the truth-derived oracle threshold.
    ///
    /// Prints {"annotations", "records": [{frame_id, average_intensity, manual_threshold, ...}]}.
    OracleAnnotate(OracleArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// Pipeline config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainParams {
    #[arg(long, default_value_t = 5000)]
    pub epochs: usize,
    #[arg(long = "learning-rate", default_value_t = 0.05)]
    pub learning_rate: f64,
    /// Weight initialization seed.
    #[arg(long = "train-seed", default_value_t = 0)]
    pub train_seed: u64,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub category: Category,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Scene spec (JSON) overriding the category preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MasksArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub frame: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub fraction: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long = "ui-dir")]
    pub ui_dir: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainParams,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub category: Category,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub train: TrainParams,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Write the marked frame here (PNG or PGM by extension).
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// One manifest per category; repeat for several.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub annotations: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub train: TrainParams,
    /// Match radius in pixels (default: the config's max track radius).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub train: TrainParams,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
