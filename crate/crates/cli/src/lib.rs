//! `dermfuse` command-line driver: config handling, the pipeline
//! subcommands and their CSV/SVG reports.
//!
//! Exit codes: 0 success, 2 config, 3 data, 4 training, 5 checkpoint,
//! 6 fusion input.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use dermfuse_core::nn::ArchKind;
use dermfuse_core::train::LossKind;

pub use commands::Outcome;
pub use config::{Overrides, RunConfig};
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Inception,
    Densenet,
}

impl From<Arch> for ArchKind {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Inception => ArchKind::MiniInception,
            Arch::Densenet => ArchKind::MiniDensenet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Bce,
    Softmax,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Bce => LossKind::BinaryCrossEntropy,
            Loss::Softmax => LossKind::CategoricalCrossEntropy,
        }
    }
}

/// Two-backbone lesion classifier with weighted score fusion.
///
/// Settings come from built-in defaults, then `--config`, then flags.
#[derive(Debug, Parser)]
#[command(name = "dermfuse", version)]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the split, weight init, batch order and synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// `id,path,label` manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub loss: Option<Loss>,
    /// Decision threshold on the class-1 score.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Fusion weights, normalized to sum to 1.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1, conflicts_with = "sweep")]
    pub weights: Option<Vec<f64>>,
    /// Choose fusion weights by grid search on labeled scores.
    #[arg(long, global = true)]
    pub sweep: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train.idx, val.idx and test.idx for the manifest.
    Split,
    /// Train one backbone on train.idx, selecting the checkpoint on val.idx.
    Train {
        #[arg(long, value_enum)]
        arch: Arch,
    },
    /// Score the samples of a split file with a checkpoint.
    Predict {
        #[arg(long, value_enum)]
        arch: Arch,
        /// Defaults to `<out_dir>/model_<arch>.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out_dir>/test.idx`.
        split_file: Option<PathBuf>,
    },
    /// Fuse two `id,score[,label]` files into fused.csv.
    Fuse {
        scores_a: PathBuf,
        scores_b: PathBuf,
        /// Labeled score files to run the weight sweep on.
        #[arg(long, num_args = 2, value_names = ["A", "B"], requires = "sweep")]
        sweep_on: Option<Vec<PathBuf>>,
    },
    /// Metrics, confusion matrix and ROC curve for a labeled scores file.
    Eval {
        /// Fused or single-model scores; defaults to `<out_dir>/fused.csv`.
        input: Option<PathBuf>,
        /// Suffix for the report file names.
        #[arg(long)]
        name: Option<String>,
    },
    /// Run the whole pipeline on synthetic data.
    Demo,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            manifest: self.manifest.clone(),
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            loss: self.loss.map(Into::into),
            threshold: self.threshold,
            weights: self.weights.clone(),
            sweep: self.sweep,
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides())?;
    match &cli.command {
        Command::Split => commands::cmd_split(&cfg),
        Command::Train { arch } => commands::cmd_train(&cfg, (*arch).into()).map(|(o, _)| o),
        Command::Predict {
            arch,
            checkpoint,
            split_file,
        } => commands::cmd_predict(&cfg, (*arch).into(), checkpoint.as_deref(), split_file.as_deref()),
        Command::Fuse {
            scores_a,
            scores_b,
            sweep_on,
        } => {
            let pair = sweep_on.as_ref().map(|v| (v[0].as_path(), v[1].as_path()));
            commands::cmd_fuse(&cfg, scores_a, scores_b, pair).map(|(o, _)| o)
        }
        Command::Eval { input, name } => commands::cmd_eval(&cfg, input.as_deref(), name.as_deref()).map(|(o, _)| o),
        Command::Demo => commands::cmd_demo(&cfg).map(|(o, _)| o),
    }
}
