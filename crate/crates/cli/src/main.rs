//! `cotrain`: synthesize cohorts, preprocess them, train and ablate the
//! collaborative classifier, evaluate checkpoints and export attributions.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cotrain::collab::Fusion;
use serde::Serialize;

use config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<cotrain::Error> for CliError {
    fn from(e: cotrain::Error) -> Self {
        use cotrain::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Config(msg),
            E::Io { .. }
            | E::Header { .. }
            | E::Format { .. }
            | E::Truncated { .. }
            | E::PayloadMismatch { .. }
            | E::Version { .. }
            | E::Corrupt { .. }
            | E::Mesh(_) => CliError::Data(msg),
            E::Shape(_) | E::InvalidArgument(_) | E::NonFinite(_) => CliError::Runtime(msg),
        }
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(value).expect("value serializes");
    text.push(b'\n');
    write_bytes(path, &text)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Parser)]
#[command(name = "cotrain", version, about = "Collaborative CNN + GNN classification of volumetric objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run config; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Surface points per sample, overriding the config.
    #[arg(long)]
    points: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            points: self.points,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FusionArg {
    Average,
    Cnn,
    Gnn,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Average => Fusion::Average,
            FusionArg::Cnn => Fusion::Cnn,
            FusionArg::Gnn => Fusion::Gnn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitArg {
    All,
    Fit,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: volume files plus a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Crop, mesh and sample every volume of a cohort directory.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Cohort directory written by `synth`.
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Train one model and write its checkpoint and history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Cohort directory; synthesized from the config when omitted.
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Train CNN-only, GNN-only and collaborative models and compare them.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "average")]
        fusion: FusionArg,
        /// Which part of the held-out split to score.
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Export Grad-CAM and edge-mask attributions for some samples.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Comma-separated sample ids.
        #[arg(long, value_delimiter = ',', required = true)]
        samples: Vec<String>,
        #[arg(long, value_enum, default_value = "average")]
        fusion: FusionArg,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Preprocess { common, cohort } => commands::preprocess(&common, &cohort),
        Command::Train { common, cohort } => commands::train(&common, cohort.as_deref()),
        Command::Ablate { common, cohort } => commands::ablate(&common, cohort.as_deref()),
        Command::Eval {
            common,
            checkpoint,
            cohort,
            fusion,
            split,
        } => commands::eval(&common, &checkpoint, cohort.as_deref(), fusion.into(), split),
        Command::Explain {
            common,
            checkpoint,
            cohort,
            samples,
            fusion,
        } => commands::explain(&common, &checkpoint, cohort.as_deref(), &samples, fusion.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cotrain: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
