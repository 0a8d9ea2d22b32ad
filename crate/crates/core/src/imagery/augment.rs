use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SarImage;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const CROP_ATTEMPTS: usize = 10;
const ASPECT_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    /// Retained area fraction of the random resized crop.
    pub crop_scale_range: (f64, f64),
    pub hflip_prob: f64,
    /// Contrast factor range; 1 leaves the image unchanged.
    pub contrast_range: (f64, f64),
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            crop_scale_range: (0.2, 1.0),
            hflip_prob: 0.5,
            contrast_range: (0.5, 1.5),
        }
    }
}

impl AugConfig {
    pub fn identity() -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            hflip_prob: 0.0,
            contrast_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config("crop_scale_range must satisfy 0 < min <= max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::config("hflip_prob must lie in [0, 1]"));
        }
        let (clo, chi) = self.contrast_range;
        if !(clo > 0.0 && clo <= chi) {
            return Err(Error::config("contrast_range must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

fn draw(rng: &mut crate::rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    // always consume one draw so the stream layout does not depend on the range
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Crop rectangle `(top, left, height, width)` following the usual
/// random-resized-crop recipe, falling back to the full image.
fn sample_crop(rng: &mut crate::rng::Rng, h: usize, w: usize, scale: (f64, f64)) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (log_lo, log_hi) = (ASPECT_RANGE.0.ln(), ASPECT_RANGE.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * draw(rng, scale);
        let ratio = draw(rng, (log_lo, log_hi)).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        let ty: f64 = rng.random();
        let tx: f64 = rng.random();
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = ((h - ch + 1) as f64 * ty).floor() as usize;
            let left = ((w - cw + 1) as f64 * tx).floor() as usize;
            return (top.min(h - ch), left.min(w - cw), ch, cw);
        }
    }
    (0, 0, h, w)
}

/// Bilinear resample of a crop back to `h x w` (half-pixel centres).
fn resample(img: &SarImage, top: usize, left: usize, ch: usize, cw: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let sy = ch as f64 / h as f64;
    let sx = cw as f64 / w as f64;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let wy = fy - y0 as f64;
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let wx = fx - x0 as f64;
            let p = |yy: usize, xx: usize| img.get(top + yy, left + xx);
            let v = (1.0 - wy) * ((1.0 - wx) * p(y0, x0) + wx * p(y0, x1))
                + wy * ((1.0 - wx) * p(y1, x0) + wx * p(y1, x1));
            out.push(v);
        }
    }
    out
}

/// Random resized crop, horizontal flip, then mean-preserving contrast
/// `max(0, m + f * (x - m))`. Deterministic per `(img, cfg, seed)`.
pub fn augment(img: &SarImage, cfg: &AugConfig, seed: u64) -> Result<SarImage> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let mut rng = rng_from_seed(seed);

    let (top, left, ch, cw) = sample_crop(&mut rng, h, w, cfg.crop_scale_range);
    let mut data = if (ch, cw) == (h, w) {
        img.data().to_vec()
    } else {
        resample(img, top, left, ch, cw)
    };

    let flip: f64 = rng.random();
    if flip < cfg.hflip_prob {
        for row in data.chunks_mut(w) {
            row.reverse();
        }
    }

    let f = draw(&mut rng, cfg.contrast_range);
    if f != 1.0 {
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        for v in &mut data {
            *v = (mean + f * (*v - mean)).max(0.0);
        }
    }
    SarImage::new(h, w, data)
}
