use super::TargetFeature;
use crate::error::{Error, Result};

const VAR_FLOOR: f64 = 1e-12;

/// One target vector per patch, patches in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTargets {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchTargets {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::shape("patch target data length mismatch"));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, patch: usize) -> &[f64] {
        &self.data[patch * self.dim..(patch + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Standardises every patch/channel block to zero mean and unit variance
/// (all zeros when the block variance is below 1e-12) and flattens each
/// patch channel-major into a vector of length `C * p * p`.
pub fn patch_targets(tf: &TargetFeature, p: usize) -> Result<PatchTargets> {
    let (h, w, c) = (tf.height(), tf.width(), tf.channels());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!("feature {h}x{w} is not divisible into {p}x{p} patches")));
    }
    let (rows, cols) = (h / p, w / p);
    let dim = c * p * p;
    let mut data = Vec::with_capacity(rows * cols * dim);
    let mut block = vec![0.0; p * p];
    for pr in 0..rows {
        for pc in 0..cols {
            for k in 0..c {
                let plane = tf.channel(k);
                for dy in 0..p {
                    let row = (pr * p + dy) * w + pc * p;
                    block[dy * p..(dy + 1) * p].copy_from_slice(&plane[row..row + p]);
                }
                let n = block.len() as f64;
                let mean = block.iter().sum::<f64>() / n;
                let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var < VAR_FLOOR {
                    data.extend(std::iter::repeat_n(0.0, block.len()));
                } else {
                    let sd = var.sqrt();
                    data.extend(block.iter().map(|v| (v - mean) / sd));
                }
            }
        }
    }
    PatchTargets::new(rows, cols, dim, data)
}

/// Cell-resolution features (HOG) used directly: the vector of patch `(i, j)` is
/// the channel vector at cell `(i, j)`.
pub fn cell_targets(tf: &TargetFeature) -> PatchTargets {
    let (rows, cols, c) = (tf.height(), tf.width(), tf.channels());
    let mut data = Vec::with_capacity(rows * cols * c);
    for i in 0..rows * cols {
        data.extend((0..c).map(|k| tf.channel(k)[i]));
    }
    PatchTargets {
        rows,
        cols,
        dim: c,
        data,
    }
}
