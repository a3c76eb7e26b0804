use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mp3dcnn::model::{CombinePolicy, ModelKind};
use mp3dcnn::pipeline::{PrepOrder, Task};
use mp3dcnn::trainer::OptimizerKind;
use mp3dcnn::Precision;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error
  3  invalid configuration (bad values, bad volume shape, config file)
  4  I/O error
  5  malformed input file (NIfTI, manifest, checkpoint, JSON)
  6  dataset protocol error (empty class or split, unknown subject, too few samples)
  7  shape or numeric failure
  8  gradient check exceeded tolerance";

#[derive(Debug, Parser)]
#[command(name = "mp3dcnn", version, args_override_self = true, about = "Multi-pooling 3D CNN experiment harness", after_help = EXIT_CODES)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic phantom dataset.
    Generate(GenerateArgs),
    /// Average and/or class-equalize a dataset into a new manifest.
    Preprocess(PreprocessArgs),
    /// Hold out test subjects, plan folds and train one model per fold.
    Train(TrainArgs),
    /// Majority-vote the fold models of one or more runs on their test sets.
    Evaluate(EvaluateArgs),
    /// Finite-difference checks of every layer and of the whole model.
    Gradcheck(GradcheckArgs),
    /// Summarize a NIfTI-1 file, dataset manifest or checkpoint.
    Inspect(InspectArgs),
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let dims: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>().map_err(|_| format!("`{p}` is not a non-negative integer")))
        .collect::<Result<_, _>>()?;
    dims.try_into().map_err(|_| format!("expected three comma-separated extents, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory for the manifest and volume files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Volumes per subject and stimulus.
    #[arg(long = "per-class")]
    pub per_class: Option<usize>,
    /// Volume extents, e.g. 24,24,24.
    #[arg(long, value_parser = parse_shape)]
    pub shape: Option<[usize; 3]>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the i.i.d. voxel noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Peak height of the stimulus blob.
    #[arg(long)]
    pub amplitude: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output manifest path; volume files are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to and label for this task (required by --equalize).
    #[arg(long)]
    pub task: Option<Task>,
    /// Number of same-subject, same-stimulus volumes averaged together.
    #[arg(long)]
    pub avg: Option<usize>,
    /// Subsample the majority class to the minority count.
    #[arg(long)]
    pub equalize: bool,
    #[arg(long)]
    pub order: Option<PrepOrder>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run directory for checkpoints, curves, fold plan and test set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub combine: Option<CombinePolicy>,
    /// Number of subjects drawn at random for the test set.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Explicit comma-separated test subjects; overrides --holdout.
    #[arg(long = "holdout-subjects", value_delimiter = ',')]
    pub holdout_subjects: Option<Vec<String>>,
    /// Keep class counts as they are instead of equalizing both splits.
    #[arg(long = "no-equalize")]
    pub no_equalize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Folds trained concurrently.
    #[arg(long = "parallel-folds")]
    pub parallel_folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directories written by `train`.
    #[arg(long = "run", required = false)]
    pub runs: Vec<PathBuf>,
    /// Evaluate on this manifest instead of each run's held-out test set.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Also write the comparison table to this file.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch size of the whole-model check.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Only run the per-layer checks.
    #[arg(long = "layers-only")]
    pub layers_only: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}
