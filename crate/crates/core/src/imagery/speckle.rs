use rand_distr::{Distribution, Gamma};

use super::SarImage;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Unit-mean gamma intensity multipliers (shape `looks`, scale `1/looks`), one per
/// pixel in row-major order.
pub fn speckle_multipliers(len: usize, looks: u32, seed: u64) -> Result<Vec<f64>> {
    if looks == 0 {
        return Err(Error::config("looks must be >= 1"));
    }
    let l = f64::from(looks);
    let gamma = Gamma::new(l, 1.0 / l).map_err(|e| Error::config(format!("gamma: {e}")))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..len).map(|_| gamma.sample(&mut rng)).collect())
}

/// L-look multiplicative speckle: `a = sqrt(reflectivity^2 * n)` with `n` gamma
/// distributed with unit mean. The noise field depends on `seed` only.
pub fn apply_speckle(reflectivity: &SarImage, looks: u32, seed: u64) -> Result<SarImage> {
    let n = speckle_multipliers(reflectivity.data().len(), looks, seed)?;
    let data = reflectivity
        .data()
        .iter()
        .zip(&n)
        .map(|(r, n)| r * n.sqrt())
        .collect();
    SarImage::new(reflectivity.height(), reflectivity.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_reflectivity_stays_zero() {
        let img = SarImage::from_fn(8, 8, |y, x| if (y + x) % 3 == 0 { 0.0 } else { 2.0 }).unwrap();
        let out = apply_speckle(&img, 1, 11).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            if *a == 0.0 {
                assert_eq!(*b, 0.0);
            }
        }
    }

    #[test]
    fn multiplier_mean_is_one() {
        let n = 100_000;
        let v = speckle_multipliers(n, 4, 3).unwrap();
        let (mean, _) = moments(&v);
        let se = (1.0f64 / 4.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn variance_shrinks_with_looks() {
        let vars: Vec<f64> = [1u32, 4, 16]
            .iter()
            .map(|&l| moments(&speckle_multipliers(100_000, l, 5).unwrap()).1)
            .collect();
        assert!(vars[0] > vars[1] && vars[1] > vars[2], "{vars:?}");
        // gamma(L, 1/L) has variance 1/L
        assert!((vars[0] - 1.0).abs() < 0.05);
        assert!((vars[2] - 1.0 / 16.0).abs() < 0.005);
    }

    #[test]
    fn speckle_is_multiplicative_in_reflectivity() {
        let img = SarImage::from_fn(16, 16, |y, x| 0.5 + (y * 16 + x) as f64 * 0.01).unwrap();
        let base = apply_speckle(&img, 2, 99).unwrap();
        for c in [0.1, 3.0, 250.0] {
            let scaled = apply_speckle(&img.scaled(c).unwrap(), 2, 99).unwrap();
            for (s, b) in scaled.data().iter().zip(base.data()) {
                assert!((s - c * b).abs() <= 1e-12 * (c * b).abs().max(1e-300));
            }
        }
    }

    #[test]
    fn zero_looks_rejected() {
        let img = SarImage::filled(4, 4, 1.0).unwrap();
        assert!(apply_speckle(&img, 0, 1).is_err());
    }
}
