//! The `hyfuse` command line: training, cross-validation, the fusion pair
//! matrix, synthetic data and feature export.
//!
//! [`run`] parses arguments, executes one command and returns the process
//! exit code: 0 on success, 1 for usage and configuration errors, 2 for data
//! errors and 3 when training aborts on a non-finite loss.

mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hyfuse_core::autodiff::AutodiffError;
use hyfuse_core::data::DataError;
use hyfuse_core::models::ModelError;
use hyfuse_core::train::TrainError;
use thiserror::Error;

pub use config::FileConfig;
pub use manifest::{sha256_file, RunManifest, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::Geometry(_) => CliError::Numerical(e.to_string()),
            AutodiffError::InvalidLabel { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Autodiff(inner) => inner.into(),
            ModelError::Dim { .. } | ModelError::Checkpoint(_) | ModelError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::EmptySplit(_) => CliError::Data(e.to_string()),
            TrainError::NumericalAbort { .. } => CliError::Numerical(e.to_string()),
            TrainError::Model(inner) => inner.into(),
            TrainError::Data(inner) => inner.into(),
            TrainError::Autodiff(inner) => inner.into(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "hyfuse", version, about = "Poincaré-ball fusion of speech embeddings")]
pub struct Cli {
    /// Root seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML config file. Command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on a hold-out split and save a checkpoint.
    Train(TrainArgs),
    /// k-fold cross-validation.
    CrossValidate(CrossValidateArgs),
    /// Cross-validate Concat and HYFuse on every pair of a family combination.
    PairMatrix(PairMatrixArgs),
    /// Write a paired synthetic dataset.
    Synth(SynthArgs),
    /// Write penultimate-layer features of a trained model.
    ExportFeatures(ExportArgs),
    /// Print the header of an embedding file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// fcn, cnn, concat or hyfuse.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    /// Two comma-separated filter counts, e.g. `64,128`.
    #[arg(long)]
    pub conv_filters: Option<String>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub fusion_width: Option<usize>,
    /// a-first or b-first.
    #[arg(long)]
    pub fusion_order: Option<String>,
    #[arg(long)]
    pub curvature: Option<f64>,
    #[arg(long)]
    pub ball_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "epochs")]
    pub max_epochs: Option<usize>,
    /// Epochs without improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// loss or macro_f1.
    #[arg(long)]
    pub stop_metric: Option<String>,
    /// holdout or test-fold.
    #[arg(long)]
    pub validation: Option<String>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub rep_a: Option<PathBuf>,
    #[arg(long)]
    pub rep_b: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct CrossValidateArgs {
    #[command(flatten)]
    pub data: TrainArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Plain shuffled folds instead of class-stratified ones.
    #[arg(long)]
    pub unstratified: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PairMatrixArgs {
    /// Directory of embedding files with family-tagged sidecars.
    #[arg(long)]
    pub dir: PathBuf,
    /// rlr+cbr, rlr+rlr or cbr+cbr.
    #[arg(long, default_value = "rlr+cbr")]
    pub combination: String,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub unstratified: bool,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// split or redundant.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim_a: Option<usize>,
    #[arg(long)]
    pub dim_b: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub name_a: Option<String>,
    #[arg(long)]
    pub name_b: Option<String>,
    /// rlr or cbr.
    #[arg(long)]
    pub family_a: Option<String>,
    #[arg(long)]
    pub family_b: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub rep_a: PathBuf,
    #[arg(long)]
    pub rep_b: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub file: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
