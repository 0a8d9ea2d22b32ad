use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::TargetFeature;
use crate::error::{Error, Result};
use crate::imagery::SarImage;

fn fft_2d(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Signed frequency in cycles per sample for DFT bin `k` of length `n`.
fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// Ideal radial low-pass on a real plane. The radius is normalised so that 1
/// corresponds to the Nyquist corner `(1/2, 1/2)` cycles per pixel; bins with a
/// normalised radius above `cutoff_fraction` are zeroed.
pub fn lpf_plane(data: &[f64], h: usize, w: usize, cutoff_fraction: f64) -> Result<Vec<f64>> {
    if data.len() != h * w || h == 0 || w == 0 {
        return Err(Error::shape("plane length does not match dimensions"));
    }
    if !(cutoff_fraction >= 0.0) {
        return Err(Error::config("cutoff_fraction must be >= 0"));
    }
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(&mut buf, h, w, false);
    let max_radius = (0.5f64 * 0.5 + 0.5 * 0.5).sqrt();
    for ky in 0..h {
        let fy = signed_freq(ky, h);
        for kx in 0..w {
            let fx = signed_freq(kx, w);
            if (fy * fy + fx * fx).sqrt() / max_radius > cutoff_fraction + 1e-12 {
                buf[ky * w + kx] = Complex::new(0.0, 0.0);
            }
        }
    }
    fft_2d(&mut buf, h, w, true);
    let n = (h * w) as f64;
    Ok(buf.iter().map(|c| c.re / n).collect())
}

/// Single-channel low-pass filtered image.
pub fn lpf_target(img: &SarImage, cutoff_fraction: f64) -> Result<TargetFeature> {
    let out = lpf_plane(img.data(), img.height(), img.width(), cutoff_fraction)?;
    TargetFeature::new(1, img.height(), img.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::roa::tests::random_image;

    #[test]
    fn full_cutoff_is_identity() {
        let img = random_image(16, 24, 3);
        let out = lpf_target(&img, 1.0).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_survives_any_cutoff() {
        let img = SarImage::filled(16, 16, 1.7).unwrap();
        for c in [0.0, 0.1, 0.5] {
            let out = lpf_target(&img, c).unwrap();
            assert!(out.data().iter().all(|v| (v - 1.7).abs() < 1e-6));
        }
    }

    #[test]
    fn nyquist_checkerboard_is_removed() {
        let (h, w) = (16, 16);
        let board: Vec<f64> = (0..h * w)
            .map(|i| if (i / w + i % w) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let out = lpf_plane(&board, h, w, 0.25).unwrap();
        assert!(out.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-6);
    }

    #[test]
    fn low_frequency_is_kept() {
        let (h, w) = (32, 32);
        let wave: Vec<f64> = (0..h * w)
            .map(|i| (2.0 * std::f64::consts::PI * (i % w) as f64 / w as f64).cos())
            .collect();
        let out = lpf_plane(&wave, h, w, 0.25).unwrap();
        for (a, b) in wave.iter().zip(&out) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
