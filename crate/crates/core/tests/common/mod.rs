//! Naive reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use rand::Rng;
use sarjepa::features::KernelKind;
use sarjepa::imagery::SarImage;
use sarjepa::rng::rng_from_seed;

pub fn random_image(h: usize, w: usize, seed: u64) -> SarImage {
    let mut rng = rng_from_seed(seed);
    SarImage::from_fn(h, w, |_, _| rng.random_range(0.05..5.0)).unwrap()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mirror(i: isize, n: isize) -> usize {
    let i = i.abs();
    (if i >= n { 2 * n - 2 - i } else { i }) as usize
}

/// Ratio-of-averages by explicit summation over each half window with 2-D
/// kernel weights.
pub fn roa(img: &SarImage, r: usize, kind: KernelKind, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let r = r as isize;
    let sigma = 0.3 * (r as f64 - 1.0) + 0.8;
    let wt = |dy: isize, dx: isize| match kind {
        KernelKind::Linear => 1.0,
        KernelKind::Gaussian => (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp(),
    };
    let mut r1 = Vec::new();
    let mut r3 = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut sums = [0.0f64; 4];
            let mut wsum = [0.0f64; 4];
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = img.get(mirror(y + dy, h), mirror(x + dx, w)) + eps;
                    let k = wt(dy, dx);
                    let mut add = |slot: usize| {
                        sums[slot] += k * v;
                        wsum[slot] += k;
                    };
                    if dx > 0 {
                        add(0);
                    }
                    if dx < 0 {
                        add(1);
                    }
                    if dy > 0 {
                        add(2);
                    }
                    if dy < 0 {
                        add(3);
                    }
                }
            }
            let m: Vec<f64> = (0..4).map(|i| sums[i] / wsum[i]).collect();
            r1.push(m[0] / m[1]);
            r3.push(m[2] / m[3]);
        }
    }
    (r1, r3)
}

/// `(g_h, g_v, g_m)` from the oracle ratios.
pub fn gr(img: &SarImage, r: usize, kind: KernelKind, eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (r1, r3) = roa(img, r, kind, eps);
    let gh: Vec<f64> = r1.iter().map(|v| v.ln()).collect();
    let gv: Vec<f64> = r3.iter().map(|v| v.ln()).collect();
    let gm = gh.iter().zip(&gv).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    (gh, gv, gm)
}

/// Channel-major magnitudes over ascending scales.
pub fn multi_scale(img: &SarImage, scales: &[usize], kind: KernelKind, eps: f64) -> Vec<f64> {
    let mut s = scales.to_vec();
    s.sort_unstable();
    s.iter().flat_map(|&r| gr(img, r, kind, eps).2).collect()
}

/// Differential HOG from centered differences.
pub fn hog(img: &SarImage, cell: usize, bins: usize) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let px = |y: isize, x: isize| img.get(mirror(y, h), mirror(x, w));
    let mut gh = Vec::new();
    let mut gv = Vec::new();
    for y in 0..h {
        for x in 0..w {
            gh.push((px(y, x + 1) - px(y, x - 1)) / 2.0);
            gv.push((px(y + 1, x) - px(y - 1, x)) / 2.0);
        }
    }
    hog_from_gradients(&gh, &gv, h as usize, w as usize, cell, bins)
}

/// Ratio-gradient HOG: one differential-style histogram block per scale,
/// scale-major.
pub fn sar_hog(img: &SarImage, scales: &[usize], eps: f64, cell: usize, bins: usize) -> Vec<f64> {
    scales
        .iter()
        .flat_map(|&r| {
            let (gh, gv, _) = gr(img, r, KernelKind::Linear, eps);
            hog_from_gradients(&gh, &gv, img.height(), img.width(), cell, bins)
        })
        .collect()
}

/// Per cell, every pixel votes into each bin with a triangular weight on the
/// circular 0..180 degree axis; each cell histogram is L2-normalised.
pub fn hog_from_gradients(gh: &[f64], gv: &[f64], h: usize, w: usize, cell: usize, bins: usize) -> Vec<f64> {
    let (rows, cols) = (h / cell, w / cell);
    let width = 180.0 / bins as f64;
    let mut out = vec![0.0; bins * rows * cols];
    for cy in 0..rows {
        for cx in 0..cols {
            let mut hist = vec![0.0; bins];
            for y in cy * cell..(cy + 1) * cell {
                for x in cx * cell..(cx + 1) * cell {
                    let (gx, gy) = (gh[y * w + x], gv[y * w + x]);
                    let mag = (gx * gx + gy * gy).sqrt();
                    let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
                    for (b, slot) in hist.iter_mut().enumerate() {
                        let d = (deg - (b as f64 + 0.5) * width).abs();
                        let d = d.min(180.0 - d);
                        *slot += mag * (1.0 - d / width).max(0.0);
                    }
                }
            }
            let n = hist.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
            for b in 0..bins {
                out[b * rows * cols + cy * cols + cx] = hist[b] / n;
            }
        }
    }
    out
}

/// Mean attention distance per head from `[seq][head][query][key]` maps,
/// walking query and key grid coordinates explicitly.
pub fn attention_distance(maps: &[f32], n_seq: usize, heads: usize, side: usize, patch: usize) -> Vec<f64> {
    let n = side * side;
    let mut out = vec![0.0; heads];
    for s in 0..n_seq {
        for (hd, acc) in out.iter_mut().enumerate() {
            for qy in 0..side {
                for qx in 0..side {
                    for ky in 0..side {
                        for kx in 0..side {
                            let q = qy * side + qx;
                            let k = ky * side + kx;
                            let a = maps[((s * heads + hd) * n + q) * n + k] as f64;
                            let dy = (qy as f64 - ky as f64) * patch as f64;
                            let dx = (qx as f64 - kx as f64) * patch as f64;
                            *acc += a * (dy * dy + dx * dx).sqrt();
                        }
                    }
                }
            }
        }
    }
    out.iter().map(|v| v / (n_seq * n) as f64).collect()
}
