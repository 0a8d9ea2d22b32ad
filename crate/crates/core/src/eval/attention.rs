use serde::{Deserialize, Serialize};

use super::encode::image_tokens;
use crate::error::{Error, Result};
use crate::imagery::SarImage;
use crate::model::{ModelState, Scalar, TokenBatch};

/// One row of `attn.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnRow {
    pub layer: usize,
    pub head: usize,
    pub mean_distance_px: f64,
}

/// Per-head mean attention distance from post-softmax maps laid out as
/// `[sequence][head][query][key]` over a `side x side` token grid. Distances
/// are between patch centres, in pixels.
pub fn distance_from_maps<T: Scalar>(maps: &[T], n_seq: usize, heads: usize, side: usize, patch_side: usize) -> Vec<f64> {
    let n = side * side;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dy = (i / side) as f64 - (j / side) as f64;
            let dx = (i % side) as f64 - (j % side) as f64;
            dist[i * n + j] = patch_side as f64 * dy.hypot(dx);
        }
    }
    let mut out = vec![0.0; heads];
    for s in 0..n_seq {
        for (h, acc) in out.iter_mut().enumerate() {
            let map = &maps[(s * heads + h) * n * n..(s * heads + h + 1) * n * n];
            *acc += map
                .iter()
                .zip(&dist)
                .map(|(a, d)| a.to_f64().unwrap_or(f64::NAN) * d)
                .sum::<f64>();
        }
    }
    let denom = (n_seq * n) as f64;
    out.iter().map(|v| v / denom).collect()
}

/// Mean attention distance of every encoder head, averaged over queries and
/// images, with the full patch grid visible.
pub fn attention_distance(state: &ModelState<f32>, images: &[SarImage]) -> Result<Vec<AttnRow>> {
    if images.is_empty() {
        return Err(Error::config("attention distance needs at least one image"));
    }
    let cfg = state.config();
    let tokens = images
        .iter()
        .map(|img| image_tokens(img, cfg.patch_side))
        .collect::<Result<Vec<_>>>()?;
    let side = tokens[0].1;
    if tokens.iter().any(|t| t.1 != side) {
        return Err(Error::shape("images must share their size"));
    }
    let views: Vec<_> = tokens.iter().map(|t| t.0.view()).collect();
    let patches = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
    let n = patches.nrows();
    let batch = TokenBatch::new(patches, vec![false; n], side)?;
    let (_, cache) = state.forward(&batch, true)?;
    let mut rows = Vec::new();
    for layer in 0..cfg.encoder_depth {
        let d = distance_from_maps(cache.attention_maps(layer), images.len(), cfg.heads, side, cfg.patch_side);
        rows.extend(d.into_iter().enumerate().map(|(head, mean_distance_px)| AttnRow {
            layer,
            head,
            mean_distance_px,
        }));
    }
    Ok(rows)
}
