use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::eval::ProbeMode;
use crate::features::TargetKind;
use crate::masking::MaskMode;

fn parse_feature(s: &str) -> Result<TargetKind, String> {
    TargetKind::parse(s).map_err(|e| e.to_string())
}

fn parse_mask(s: &str) -> Result<MaskMode, String> {
    MaskMode::parse(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<ProbeMode, String> {
    ProbeMode::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Parser)]
#[command(name = "sarjepa", version, about = "Masked local-window pretraining with ratio-gradient targets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random stream of the run
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Target-feature flags.
#[derive(Debug, Clone, Default, Args)]
pub struct FeatureArgs {
    #[arg(long, value_parser = parse_feature, value_name = "pixel|lpf|hog|sarhog|grlin|grgau")]
    pub feature: Option<TargetKind>,
    /// Comma-separated ROA half sizes, e.g. 5,9,13,17
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MaskArgs {
    #[arg(long, value_parser = parse_mask, value_name = "local|global")]
    pub mask: Option<MaskMode>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProbeArgs {
    /// Comma-separated shot counts, e.g. 1,5,10
    #[arg(long)]
    pub shots: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_parser = parse_mode, value_name = "linear|finetune")]
    pub mode: Option<ProbeMode>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic pretraining corpus and labelled set
    Gen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute a target feature for one image
    Features {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        feature: FeatureArgs,
        /// Input image (.f32 with sidecar, or 16-bit .png)
        #[arg(long)]
        input: PathBuf,
        /// Patch side, used as the HOG cell size
        #[arg(long)]
        patch_side: Option<usize>,
    },
    /// Pretrain an encoder/predictor
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        feature: FeatureArgs,
        #[command(flatten)]
        mask: MaskArgs,
        /// Dataset root, read from the config's split (default "pretrain").
        /// Without it a synthetic corpus is generated from the config
        #[arg(long)]
        data: Option<PathBuf>,
        /// Paper-scale schedule (200 epochs, batch 300) and eight predictor blocks
        #[arg(long)]
        paper_faithful: bool,
    },
    /// Few-shot probing of a checkpoint (or of a random encoder)
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        probe: ProbeArgs,
        /// Checkpoint directory; omitted means a randomly initialised encoder
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Labelled dataset root and split
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Mean attention distance per encoder layer and head
    Attn {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Pretrain + probe over a grid of dataset fractions, model sizes and epochs
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        feature: FeatureArgs,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long)]
        paper_faithful: bool,
        /// Run grid points on worker threads; results match the sequential order
        #[arg(long)]
        parallel: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Features { .. } => "features",
            Command::Pretrain { .. } => "pretrain",
            Command::Probe { .. } => "probe",
            Command::Attn { .. } => "attn",
            Command::Sweep { .. } => "sweep",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Gen { common }
            | Command::Features { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Probe { common, .. }
            | Command::Attn { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}
