//! Target encoders: ratio-of-average gradients at several scales, plus the
//! pixel / low-pass / HOG / ratio-HOG alternatives, and per-patch tokenisation.

mod hog;
mod lpf;
mod patch;
mod roa;

pub use hog::{centered_gradient, hog_target, GradientKind, HOG_BINS};
pub use lpf::{lpf_plane, lpf_target};
pub use patch::{cell_targets, patch_targets, PatchTargets};
pub use roa::{gr_single_scale, multi_scale_target, roa_ratios, GradientField, KernelKind, RoaKernelBank};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::SarImage;

/// Multi-channel raster stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFeature {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TargetFeature {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        Self::new(channels, height, width, planes.into_iter().flatten().collect())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }
}

/// Which signal the predictor regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Pixel,
    Lpf,
    Hog,
    SarHog,
    GrLin,
    GrGau,
}

impl TargetKind {
    pub const ALL: [TargetKind; 6] = [
        TargetKind::Pixel,
        TargetKind::Lpf,
        TargetKind::Hog,
        TargetKind::SarHog,
        TargetKind::GrLin,
        TargetKind::GrGau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Pixel => "pixel",
            TargetKind::Lpf => "lpf",
            TargetKind::Hog => "hog",
            TargetKind::SarHog => "sarhog",
            TargetKind::GrLin => "grlin",
            TargetKind::GrGau => "grgau",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown feature '{s}' (expected pixel, lpf, hog, sarhog, grlin or grgau)")))
    }
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full target-encoder configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub scales: Vec<usize>,
    pub epsilon: f64,
    pub lpf_cutoff: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            kind: TargetKind::GrLin,
            scales: vec![5, 9, 13, 17],
            epsilon: 1e-2,
            lpf_cutoff: 0.5,
        }
    }
}

impl TargetSpec {
    pub fn with_kind(kind: TargetKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    fn bank(&self, kernel_kind: KernelKind) -> Result<RoaKernelBank> {
        RoaKernelBank::new(self.scales.clone(), kernel_kind, self.epsilon)
    }

    /// Per-pixel (or per-cell for the HOG kinds) feature raster.
    pub fn feature(&self, img: &SarImage, patch_side: usize) -> Result<TargetFeature> {
        match self.kind {
            TargetKind::Pixel => TargetFeature::new(1, img.height(), img.width(), img.data().to_vec()),
            TargetKind::Lpf => lpf_target(img, self.lpf_cutoff),
            TargetKind::GrLin => multi_scale_target(img, &self.bank(KernelKind::Linear)?),
            TargetKind::GrGau => multi_scale_target(img, &self.bank(KernelKind::Gaussian)?),
            TargetKind::Hog => hog_target(img, patch_side, HOG_BINS, GradientKind::Differential, None),
            TargetKind::SarHog => hog_target(
                img,
                patch_side,
                HOG_BINS,
                GradientKind::Ratio,
                Some(&self.bank(KernelKind::Linear)?),
            ),
        }
    }

    /// Length of one patch target vector.
    pub fn dim(&self, patch_side: usize) -> usize {
        let area = patch_side * patch_side;
        match self.kind {
            TargetKind::Pixel | TargetKind::Lpf => area,
            TargetKind::GrLin | TargetKind::GrGau => self.scales.len() * area,
            TargetKind::Hog => HOG_BINS,
            TargetKind::SarHog => HOG_BINS * self.scales.len(),
        }
    }

    /// Tokenised targets, one vector per patch in row-major patch order.
    /// Pixel-resolution features are standardised per patch and channel; HOG
    /// cells are already normalised and are used as-is.
    pub fn patch_targets(&self, img: &SarImage, patch_side: usize) -> Result<PatchTargets> {
        let tf = self.feature(img, patch_side)?;
        match self.kind {
            TargetKind::Hog | TargetKind::SarHog => Ok(cell_targets(&tf)),
            _ => patch_targets(&tf, patch_side),
        }
    }
}
