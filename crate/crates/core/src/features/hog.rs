use std::f64::consts::PI;

use super::roa::reflect;
use super::{gr_single_scale, GradientField, RoaKernelBank, TargetFeature};
use crate::error::{Error, Result};
use crate::imagery::SarImage;

pub const HOG_BINS: usize = 9;
const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientKind {
    /// Centered pixel differences.
    Differential,
    /// Log-ratio gradients at every scale of the bank.
    Ratio,
}

/// Centered differences with mirror padding: `gx = (I[x+1] - I[x-1]) / 2`.
pub fn centered_gradient(img: &SarImage) -> GradientField {
    let (h, w) = (img.height(), img.width());
    let mut g_h = Vec::with_capacity(h * w);
    let mut g_v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let xi = x as isize;
            let yi = y as isize;
            g_h.push(0.5 * (img.get(y, reflect(xi + 1, w)) - img.get(y, reflect(xi - 1, w))));
            g_v.push(0.5 * (img.get(reflect(yi + 1, h), x) - img.get(reflect(yi - 1, h), x)));
        }
    }
    let g_m = g_h.iter().zip(&g_v).map(|(a, b): (&f64, &f64)| a.hypot(*b)).collect();
    GradientField {
        height: h,
        width: w,
        g_h,
        g_v,
        g_m,
    }
}

/// Unsigned-orientation histograms per cell, L2-normalised per cell.
fn cell_histograms(field: &GradientField, cell: usize, bins: usize) -> Vec<Vec<f64>> {
    let (h, w) = (field.height, field.width);
    let (rows, cols) = (h / cell, w / cell);
    let bin_width = PI / bins as f64;
    let mut hists = vec![vec![0.0; bins]; rows * cols];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mag = field.g_m[i];
            if mag == 0.0 {
                continue;
            }
            let mut theta = field.g_v[i].atan2(field.g_h[i]);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta -= PI;
            }
            // bin centres sit at (b + 0.5) * bin_width
            let t = theta / bin_width - 0.5;
            let lo = t.floor();
            let frac = t - lo;
            let b0 = (lo as isize).rem_euclid(bins as isize) as usize;
            let b1 = (b0 + 1) % bins;
            let hist = &mut hists[(y / cell) * cols + x / cell];
            hist[b0] += mag * (1.0 - frac);
            hist[b1] += mag * frac;
        }
    }
    for hist in &mut hists {
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        hist.iter_mut().for_each(|v| *v /= norm);
    }
    hists
}

/// Histogram of oriented gradients with one cell per patch.
///
/// The result is at cell resolution: `height = H / cell`, `width = W / cell`,
/// with `bins` channels for differential gradients and `bins * scales` channels
/// (scale-major) for ratio gradients.
pub fn hog_target(
    img: &SarImage,
    cell: usize,
    bins: usize,
    kind: GradientKind,
    bank: Option<&RoaKernelBank>,
) -> Result<TargetFeature> {
    let (h, w) = (img.height(), img.width());
    if cell == 0 || h % cell != 0 || w % cell != 0 {
        return Err(Error::shape(format!(
            "image {h}x{w} is not divisible into {cell}x{cell} cells"
        )));
    }
    if bins == 0 {
        return Err(Error::config("bins must be >= 1"));
    }
    let fields = match kind {
        GradientKind::Differential => vec![centered_gradient(img)],
        GradientKind::Ratio => {
            let bank = bank.ok_or_else(|| Error::config("ratio HOG needs a kernel bank"))?;
            bank.scales
                .iter()
                .map(|&r| gr_single_scale(img, r, bank.kernel_kind, bank.epsilon))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let (rows, cols) = (h / cell, w / cell);
    let mut planes = Vec::with_capacity(bins * fields.len());
    for field in &fields {
        let hists = cell_histograms(field, cell, bins);
        for b in 0..bins {
            planes.push(hists.iter().map(|hist| hist[b]).collect());
        }
    }
    TargetFeature::from_planes(rows, cols, planes)
}
