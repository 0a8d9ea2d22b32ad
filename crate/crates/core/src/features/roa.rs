use serde::{Deserialize, Serialize};

use super::TargetFeature;
use crate::error::{Error, Result};
use crate::imagery::SarImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Gaussian,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Gaussian => "gaussian",
        }
    }
}

/// Half-window sizes and weighting for the multi-scale ratio gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaKernelBank {
    pub scales: Vec<usize>,
    pub kernel_kind: KernelKind,
    pub epsilon: f64,
}

impl Default for RoaKernelBank {
    fn default() -> Self {
        Self {
            scales: vec![5, 9, 13, 17],
            kernel_kind: KernelKind::Linear,
            epsilon: 1e-2,
        }
    }
}

impl RoaKernelBank {
    /// Scales are sorted ascending.
    pub fn new(mut scales: Vec<usize>, kernel_kind: KernelKind, epsilon: f64) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::config("scales must not be empty"));
        }
        if scales.contains(&0) {
            return Err(Error::config("every scale r must be >= 1"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config("epsilon must be finite and >= 0"));
        }
        scales.sort_unstable();
        Ok(Self {
            scales,
            kernel_kind,
            epsilon,
        })
    }

    /// Gaussian standard deviation tied to the kernel side `2r + 1`.
    pub fn gaussian_sigma(r: usize) -> f64 {
        0.3 * (r as f64 - 1.0) + 0.8
    }
}

/// Horizontal and vertical log-ratio gradients and their magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub g_h: Vec<f64>,
    pub g_v: Vec<f64>,
    pub g_m: Vec<f64>,
}

/// Mirror index without repeating the edge sample (…, 2, 1, 0, 1, 2, …).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// 1-D weights indexed by |offset|, 0..=r.
fn axis_weights(r: usize, kind: KernelKind) -> Vec<f64> {
    match kind {
        KernelKind::Linear => vec![1.0; r + 1],
        KernelKind::Gaussian => {
            let s = RoaKernelBank::gaussian_sigma(r);
            (0..=r)
                .map(|d| (-((d * d) as f64) / (2.0 * s * s)).exp())
                .collect()
        }
    }
}

/// Ratio-of-averages along the two image axes.
///
/// On `img + epsilon`, `R1 = mean(right half) / mean(left half)` where the right
/// half spans columns `x+1..=x+r` and rows `y-r..=y+r`; `R3` is
/// `mean(below) / mean(above)`. Borders are mirror-padded. Returned planes are
/// row-major `(R1, R3)`.
pub fn roa_ratios(
    img: &SarImage,
    r: usize,
    kind: KernelKind,
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (h, w) = (img.height(), img.width());
    let need = 2 * r + 1;
    if r == 0 || h < need || w < need {
        return Err(Error::ScaleTooLarge {
            r,
            need,
            height: h,
            width: w,
        });
    }
    let src: Vec<f64> = img.data().iter().map(|v| v + epsilon).collect();
    let wts = axis_weights(r, kind);
    let full: f64 = wts[0] + 2.0 * wts[1..].iter().sum::<f64>();
    let half: f64 = wts[1..].iter().sum();
    let norm = full * half;
    let ri = r as isize;

    // vertical full-window pass, then one-sided horizontal sums
    let mut col_sum = vec![0.0; h * w];
    let mut row_sum = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut cs = 0.0;
            let mut rs = 0.0;
            for d in -ri..=ri {
                let wt = wts[d.unsigned_abs()];
                cs += wt * src[reflect(y as isize + d, h) * w + x];
                rs += wt * src[y * w + reflect(x as isize + d, w)];
            }
            col_sum[y * w + x] = cs;
            row_sum[y * w + x] = rs;
        }
    }

    let mut r1 = vec![0.0; h * w];
    let mut r3 = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut right, mut left, mut below, mut above) = (0.0, 0.0, 0.0, 0.0);
            for d in 1..=ri {
                let wt = wts[d as usize];
                right += wt * col_sum[y * w + reflect(x as isize + d, w)];
                left += wt * col_sum[y * w + reflect(x as isize - d, w)];
                below += wt * row_sum[reflect(y as isize + d, h) * w + x];
                above += wt * row_sum[reflect(y as isize - d, h) * w + x];
            }
            if left <= 0.0 || above <= 0.0 || right <= 0.0 || below <= 0.0 {
                return Err(Error::config(format!(
                    "zero half-window mean at ({y}, {x}); use epsilon > 0 for images with zeros"
                )));
            }
            r1[y * w + x] = (right / norm) / (left / norm);
            r3[y * w + x] = (below / norm) / (above / norm);
        }
    }
    Ok((r1, r3))
}

/// `g_h = ln R1`, `g_v = ln R3`, `g_m = sqrt(g_h^2 + g_v^2)`.
pub fn gr_single_scale(img: &SarImage, r: usize, kind: KernelKind, epsilon: f64) -> Result<GradientField> {
    let (r1, r3) = roa_ratios(img, r, kind, epsilon)?;
    let g_h: Vec<f64> = r1.iter().map(|v| v.ln()).collect();
    let g_v: Vec<f64> = r3.iter().map(|v| v.ln()).collect();
    let g_m = g_h.iter().zip(&g_v).map(|(a, b)| a.hypot(*b)).collect();
    Ok(GradientField {
        height: img.height(),
        width: img.width(),
        g_h,
        g_v,
        g_m,
    })
}

/// Gradient magnitudes stacked by ascending scale.
pub fn multi_scale_target(img: &SarImage, bank: &RoaKernelBank) -> Result<TargetFeature> {
    let mut scales = bank.scales.clone();
    scales.sort_unstable();
    let planes = scales
        .iter()
        .map(|&r| gr_single_scale(img, r, bank.kernel_kind, bank.epsilon).map(|g| g.g_m))
        .collect::<Result<Vec<_>>>()?;
    TargetFeature::from_planes(img.height(), img.width(), planes)
}
