use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::imagery::SarImage;
use crate::masking::{PatchGrid, Window};
use crate::model::{ModelState, TokenBatch};
use crate::trainer::{normalise_input, patch_rows};

const ENCODE_BATCH: usize = 64;

/// All patches of the image as one unmasked full-grid window.
pub fn image_tokens(img: &SarImage, patch_side: usize) -> Result<(Array2<f32>, usize)> {
    let grid = PatchGrid::for_image(img.height(), img.width(), patch_side)?;
    if grid.rows != grid.cols {
        return Err(Error::shape("feature extraction expects a square patch grid"));
    }
    let win = Window {
        row: 0,
        col: 0,
        side: grid.rows,
    };
    Ok((patch_rows(&normalise_input(img), img.width(), &grid, &win), grid.rows))
}

/// Mean-pooled normalised encoder output of the whole image, nothing masked.
pub fn encode_image_features(state: &ModelState<f32>, img: &SarImage) -> Result<Vec<f32>> {
    Ok(encode_dataset(state, std::slice::from_ref(img))?.row(0).to_vec())
}

/// One pooled feature row per image.
pub fn encode_dataset(state: &ModelState<f32>, images: &[SarImage]) -> Result<Array2<f32>> {
    let p = state.config().patch_side;
    let mut rows = Array2::<f32>::zeros((images.len(), state.config().embed_dim));
    for (b, chunk) in images.chunks(ENCODE_BATCH).enumerate() {
        let tokens = chunk.iter().map(|img| image_tokens(img, p)).collect::<Result<Vec<_>>>()?;
        let side = tokens[0].1;
        if tokens.iter().any(|t| t.1 != side) {
            return Err(Error::shape("images in one batch must share their size"));
        }
        let views: Vec<_> = tokens.iter().map(|t| t.0.view()).collect();
        let patches = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        let n = patches.nrows();
        let batch = TokenBatch::new(patches, vec![false; n], side)?;
        let (encoded, _) = state.forward(&batch, true)?;
        let pooled = state.pool(&encoded, side * side);
        let start = b * ENCODE_BATCH;
        rows.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&pooled);
    }
    Ok(rows)
}
