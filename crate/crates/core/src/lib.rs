//! Masked local-window pretraining for speckled single-channel radar imagery.
//!
//! A small transformer sees local windows of the patch grid with most patches
//! replaced by a learned mask token, and regresses multi-scale ratio-of-average
//! gradient magnitudes of the hidden patches. Frozen features are then scored by
//! few-shot linear probing.
//!
//! Module map:
//! - [`imagery`]: synthetic scenes, speckle, augmentation, image files and datasets
//! - [`features`]: ratio gradients and the other target encoders
//! - [`masking`]: local-window and global mask plans
//! - [`model`]: encoder/predictor with relative-position bias and manual backprop
//! - [`trainer`]: AdamW, warmup-cosine schedule, pretraining loop, checkpoints
//! - [`eval`]: few-shot splits, probing, attention distance
//! - [`cli`]: the `sarjepa` command line

pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod imagery;
pub mod masking;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
