//! Speckled scene synthesis, augmentation and image files.

mod augment;
mod io;
mod scene;
mod speckle;

pub use augment::{augment, AugConfig};
pub use io::{
    read_image, read_f32, read_png16, write_f32, write_png16, Dataset, ImageFormat, ImageMeta,
    UNLABELED_CLASS,
};
pub use scene::{
    generate_corpus, generate_scene, generate_scene_with_mask, CorpusSpec, Geometry, SceneSpec, ShapeClass,
};
pub use speckle::{apply_speckle, speckle_multipliers};

use crate::error::{Error, Result};

/// Single-channel amplitude raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SarImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SarImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("image must have non-zero height and width"));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::shape(format!(
                "amplitudes must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds an image from a per-pixel function of `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies every pixel by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }
}
