use ndarray::Array2;

use super::PretrainConfig;
use crate::error::{Error, Result};
use crate::features::PatchTargets;
use crate::imagery::{augment, SarImage};
use crate::masking::{global_mask_plan, mask_plan, sample_local_windows, MaskMode, MaskPlan, PatchGrid, Window};
use crate::model::{window_loss_weights, ModelConfig};
use crate::rng::{derive_seed, stream};

/// Everything one image contributes to a training batch.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// `(n_windows * side^2, p^2)` normalised patch pixels.
    pub patches: Array2<f32>,
    /// `(n_windows * side^2, target_dim)`.
    pub targets: Array2<f32>,
    pub masked: Vec<bool>,
    /// Per-token loss weights; they sum to the image's mean loss.
    pub weights: Vec<f64>,
    pub side: usize,
    pub plan: MaskPlan,
}

impl PreparedSample {
    pub fn n_rows(&self) -> usize {
        self.masked.len()
    }
}

/// Encoder input normalisation: `x / mean(x) - 1`, so a global gain on the
/// image leaves the input unchanged.
pub fn normalise_input(img: &SarImage) -> Vec<f64> {
    let m = img.mean();
    if m <= 0.0 {
        return vec![0.0; img.data().len()];
    }
    img.data().iter().map(|v| v / m - 1.0).collect()
}

/// Pixels of each patch in `window`, one row per window position.
pub fn patch_rows(pixels: &[f64], width: usize, grid: &PatchGrid, window: &Window) -> Array2<f32> {
    let p = grid.patch_side;
    let mut out = Array2::<f32>::zeros((window.len(), p * p));
    for k in 0..window.len() {
        let g = window.grid_index(k, grid);
        let (pr, pc) = (g / grid.cols, g % grid.cols);
        let mut row = out.row_mut(k);
        for dy in 0..p {
            for dx in 0..p {
                row[dy * p + dx] = pixels[(pr * p + dy) * width + pc * p + dx] as f32;
            }
        }
    }
    out
}

/// Augments the image, computes its targets and draws windows and masks, all
/// from streams derived from `sample_seed`.
pub fn prepare_sample(
    img: &SarImage,
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    sample_seed: u64,
) -> Result<PreparedSample> {
    let p = model_cfg.patch_side;
    let aug = augment(img, &cfg.augmentation, derive_seed(sample_seed, &[stream::AUGMENT]))?;
    let spec = cfg.target_spec();
    let targets = spec.patch_targets(&aug, p)?;
    if targets.dim() != model_cfg.target_dim {
        return Err(Error::config(format!(
            "target_dim {} does not match the {} target dimension {}",
            model_cfg.target_dim,
            spec.kind.name(),
            targets.dim()
        )));
    }
    let grid = PatchGrid::for_image(aug.height(), aug.width(), p)?;
    let mask_seed = derive_seed(sample_seed, &[stream::MASK]);
    let plan = match cfg.mask_mode {
        MaskMode::Local => {
            let windows = sample_local_windows(
                &grid,
                cfg.windows_per_image,
                model_cfg.window_side,
                derive_seed(sample_seed, &[stream::WINDOWS]),
            )?;
            mask_plan(&windows, cfg.mask_ratio, mask_seed)?
        }
        MaskMode::Global => global_mask_plan(&grid, cfg.mask_ratio, mask_seed)?,
    };
    let pgca = cfg.pgca();
    let pixels = normalise_input(&aug);
    let side = plan.windows[0].side;
    let n_tok = side * side;
    let n_win = plan.windows.len();
    let dim = targets.dim();
    let mut patches = Array2::<f32>::zeros((n_win * n_tok, p * p));
    let mut tgt = Array2::<f32>::zeros((n_win * n_tok, dim));
    let mut masked = Vec::with_capacity(n_win * n_tok);
    let mut weights = Vec::with_capacity(n_win * n_tok);
    for (w, win) in plan.windows.iter().enumerate() {
        let rows = patch_rows(&pixels, aug.width(), &grid, win);
        patches.slice_mut(ndarray::s![w * n_tok..(w + 1) * n_tok, ..]).assign(&rows);
        fill_targets(&targets, &grid, win, &mut tgt, w * n_tok);
        let flags = plan.mask_flags(w);
        let ww = window_loss_weights(&flags, dim, pgca)?;
        weights.extend(ww.iter().map(|v| v / n_win as f64));
        masked.extend(flags);
    }
    // in PGCA mode nothing is replaced by the mask token
    if pgca {
        masked.iter_mut().for_each(|m| *m = false);
    }
    Ok(PreparedSample {
        patches,
        targets: tgt,
        masked,
        weights,
        side,
        plan,
    })
}

fn fill_targets(targets: &PatchTargets, grid: &PatchGrid, win: &Window, out: &mut Array2<f32>, offset: usize) {
    for k in 0..win.len() {
        let v = targets.vector(win.grid_index(k, grid));
        for (o, x) in out.row_mut(offset + k).iter_mut().zip(v) {
            *o = *x as f32;
        }
    }
}
