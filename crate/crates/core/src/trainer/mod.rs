//! Pretraining: per-sample preparation, AdamW with warmup-cosine learning rate,
//! run logs, collapse diagnostics and checkpoints.

mod adamw;
mod pretrain;
mod sample;
mod schedule;

pub use adamw::AdamW;
pub use pretrain::{
    collapse_diagnostic, pretrain, pretrain_with, sample_losses, EpochRecord, PretrainConfig,
    PretrainOutcome, RunLog, COLLAPSE_THRESHOLD,
};
pub use sample::{normalise_input, patch_rows, prepare_sample, PreparedSample};
pub use schedule::{lr_at, probe_lr_at};
