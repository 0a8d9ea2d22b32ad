use ndarray::{Array2, ArrayView2};

use super::{sc, Scalar};
use crate::error::{Error, Result};

/// Per-token weights for one window: `1 / (target_dim * masked_count)` on masked
/// tokens, or `1 / (target_dim * n)` on every token when `pgca` (no masking).
pub fn window_loss_weights(masked: &[bool], target_dim: usize, pgca: bool) -> Result<Vec<f64>> {
    let n = masked.len();
    if pgca {
        return Ok(vec![1.0 / (target_dim * n) as f64; n]);
    }
    let count = masked.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::config(
            "no masked patches in window; enable PGCA mode to train without masking",
        ));
    }
    let w = 1.0 / (target_dim * count) as f64;
    Ok(masked.iter().map(|&m| if m { w } else { 0.0 }).collect())
}

/// `sum_t w_t * sum_k (pred - target)^2` and its gradient w.r.t. `pred`.
pub fn weighted_mse<T: Scalar>(
    pred: ArrayView2<T>,
    targets: ArrayView2<T>,
    weights: &[f64],
) -> Result<(f64, Array2<T>)> {
    if pred.dim() != targets.dim() || weights.len() != pred.nrows() {
        return Err(Error::shape(format!(
            "prediction {:?}, targets {:?} and {} weights disagree",
            pred.dim(),
            targets.dim(),
            weights.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Array2::<T>::zeros(pred.dim());
    for (((p, t), mut g), &w) in pred.rows().into_iter().zip(targets.rows()).zip(grad.rows_mut()).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let wt = sc::<T>(2.0 * w);
        let mut row = 0.0;
        for k in 0..p.len() {
            let diff = p[k] - t[k];
            row += diff.to_f64().unwrap_or(f64::NAN).powi(2);
            g[k] = wt * diff;
        }
        loss += w * row;
    }
    Ok((loss, grad))
}

/// Mean over masked tokens of the per-token mean squared error; with `pgca`
/// the mean runs over every token instead.
pub fn mim_loss<T: Scalar>(
    pred: ArrayView2<T>,
    targets: ArrayView2<T>,
    masked: &[bool],
    pgca: bool,
) -> Result<f64> {
    let weights = window_loss_weights(masked, pred.ncols(), pgca)?;
    Ok(weighted_mse(pred, targets, &weights)?.0)
}
