mod common;

use proptest::prelude::*;
use sarjepa::features::{
    centered_gradient, gr_single_scale, hog_target, lpf_target, multi_scale_target, patch_targets, roa_ratios,
    GradientKind, KernelKind, RoaKernelBank, TargetFeature, TargetKind, TargetSpec, HOG_BINS,
};
use sarjepa::imagery::SarImage;

const KINDS: [KernelKind; 2] = [KernelKind::Linear, KernelKind::Gaussian];

#[test]
fn roa_matches_oracle() {
    for seed in 0..6 {
        let img = common::random_image(14, 17, seed);
        for kind in KINDS {
            for r in [1, 3, 6] {
                let (r1, r3) = roa_ratios(&img, r, kind, 0.01).unwrap();
                let (o1, o3) = common::roa(&img, r, kind, 0.01);
                assert!(common::max_rel(&r1, &o1) < 1e-10, "r1 r={r} {kind:?}");
                assert!(common::max_rel(&r3, &o3) < 1e-10, "r3 r={r} {kind:?}");
            }
        }
    }
}

#[test]
fn gr_and_multi_scale_match_oracle() {
    for seed in 10..14 {
        let img = common::random_image(20, 20, seed);
        for kind in KINDS {
            let g = gr_single_scale(&img, 4, kind, 0.0).unwrap();
            let (gh, gv, gm) = common::gr(&img, 4, kind, 0.0);
            assert!(common::max_abs(&g.g_h, &gh) < 1e-10);
            assert!(common::max_abs(&g.g_v, &gv) < 1e-10);
            assert!(common::max_abs(&g.g_m, &gm) < 1e-10);
            let bank = RoaKernelBank::new(vec![5, 2, 3], kind, 0.01).unwrap();
            let tf = multi_scale_target(&img, &bank).unwrap();
            assert_eq!(tf.channels(), 3);
            assert!(common::max_abs(tf.data(), &common::multi_scale(&img, &[2, 3, 5], kind, 0.01)) < 1e-10);
        }
    }
}

#[test]
fn hog_matches_oracle() {
    for seed in 20..24 {
        let img = common::random_image(24, 16, seed);
        let tf = hog_target(&img, 4, HOG_BINS, GradientKind::Differential, None).unwrap();
        assert_eq!((tf.channels(), tf.height(), tf.width()), (9, 6, 4));
        assert!(common::max_abs(tf.data(), &common::hog(&img, 4, HOG_BINS)) < 1e-5);
    }
}

#[test]
fn ratio_hog_matches_oracle() {
    let img = common::random_image(16, 24, 27);
    let bank = RoaKernelBank::new(vec![3, 2], KernelKind::Linear, 0.01).unwrap();
    let tf = hog_target(&img, 8, HOG_BINS, GradientKind::Ratio, Some(&bank)).unwrap();
    assert_eq!(tf.channels(), 18);
    assert!(common::max_abs(tf.data(), &common::sar_hog(&img, &[2, 3], 0.01, 8, HOG_BINS)) < 1e-5);
}

#[test]
fn step_edge_gives_known_log_ratio() {
    // left half 1, right half 4
    let img = SarImage::from_fn(21, 20, |_, x| if x >= 10 { 4.0 } else { 1.0 }).unwrap();
    let g = gr_single_scale(&img, 3, KernelKind::Linear, 0.0).unwrap();
    let at = |y: usize, x: usize| g.g_h[y * 20 + x];
    assert!((at(10, 9) - 4f64.ln()).abs() < 1e-12);
    assert!((at(10, 10) - 4f64.ln()).abs() < 1e-12);
    assert!((at(10, 8) - 3f64.ln()).abs() < 1e-12);
    assert!(at(10, 3).abs() < 1e-12);
    assert!(g.g_v.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn lpf_matches_naive_dft() {
    let (h, w) = (6, 8);
    let img = common::random_image(h, w, 31);
    let cutoff = 0.45;
    let out = lpf_target(&img, cutoff).unwrap();
    let tau = std::f64::consts::TAU;
    let freq = |k: usize, n: usize| {
        let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        k / n as f64
    };
    let corner = 0.5f64.hypot(0.5);
    let mut expect = vec![0.0; h * w];
    for ky in 0..h {
        for kx in 0..w {
            if freq(ky, h).hypot(freq(kx, w)) / corner > cutoff {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let a = -tau * (ky * y) as f64 / h as f64 - tau * (kx * x) as f64 / w as f64;
                    re += img.get(y, x) * a.cos();
                    im += img.get(y, x) * a.sin();
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let a = tau * (ky * y) as f64 / h as f64 + tau * (kx * x) as f64 / w as f64;
                    expect[y * w + x] += (re * a.cos() - im * a.sin()) / (h * w) as f64;
                }
            }
        }
    }
    assert!(common::max_abs(out.data(), &expect) < 1e-9);
}

#[test]
fn target_dims_per_kind() {
    let img = common::random_image(64, 64, 5);
    for (kind, dim) in [
        (TargetKind::Pixel, 64),
        (TargetKind::Lpf, 64),
        (TargetKind::Hog, 9),
        (TargetKind::SarHog, 36),
        (TargetKind::GrLin, 256),
        (TargetKind::GrGau, 256),
    ] {
        let spec = TargetSpec::with_kind(kind);
        let t = spec.patch_targets(&img, 8).unwrap();
        assert_eq!((t.dim(), t.len()), (dim, 64), "{kind:?}");
        assert_eq!(spec.dim(8), dim);
    }
}

fn positive_image(h: usize, w: usize) -> impl Strategy<Value = SarImage> {
    prop::collection::vec(0.01f64..100.0, h * w).prop_map(move |v| SarImage::new(h, w, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gr_is_gain_invariant(img in positive_image(16, 16), c in prop::sample::select(vec![0.1, 1.0, 37.5, 1000.0])) {
        for kind in KINDS {
            let a = gr_single_scale(&img, 3, kind, 0.0).unwrap();
            let b = gr_single_scale(&img.scaled(c).unwrap(), 3, kind, 0.0).unwrap();
            for (x, y) in a.g_m.iter().zip(&b.g_m) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn centered_gradient_scales_with_gain(img in positive_image(12, 12), c in 0.01f64..1000.0) {
        let a = centered_gradient(&img);
        let b = centered_gradient(&img.scaled(c).unwrap());
        for (x, y) in a.g_m.iter().zip(&b.g_m) {
            prop_assert!((c * x - y).abs() <= 1e-9 * y.abs().max(1e-9));
        }
    }

    #[test]
    fn horizontal_flip_negates_g_h(img in positive_image(14, 14)) {
        let a = gr_single_scale(&img, 2, KernelKind::Linear, 0.01).unwrap();
        let b = gr_single_scale(&img.flipped_horizontal(), 2, KernelKind::Linear, 0.01).unwrap();
        for y in 0..14 {
            for x in 0..14 {
                prop_assert!((a.g_h[y * 14 + x] + b.g_h[y * 14 + 13 - x]).abs() < 1e-9);
                prop_assert!((a.g_m[y * 14 + x] - b.g_m[y * 14 + 13 - x]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn patch_blocks_are_standardised(data in prop::collection::vec(-5.0f64..5.0, 2 * 16 * 8)) {
        let tf = TargetFeature::new(2, 16, 8, data).unwrap();
        let t = patch_targets(&tf, 4).unwrap();
        prop_assert_eq!(t.dim(), 32);
        for i in 0..t.len() {
            for block in t.vector(i).chunks(16) {
                let mean = block.iter().sum::<f64>() / 16.0;
                let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-9 || var == 0.0);
            }
        }
    }

    #[test]
    fn hog_cells_have_unit_or_zero_norm(img in positive_image(16, 16)) {
        let tf = hog_target(&img, 8, HOG_BINS, GradientKind::Differential, None).unwrap();
        for cell in 0..4 {
            let n: f64 = (0..HOG_BINS).map(|b| tf.channel(b)[cell].powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9 || n == 0.0);
        }
    }
}

#[test]
fn zero_pixels_need_epsilon() {
    let img = SarImage::from_fn(12, 12, |y, _| if y < 6 { 0.0 } else { 1.0 }).unwrap();
    assert!(gr_single_scale(&img, 2, KernelKind::Linear, 0.0).is_err());
    assert!(gr_single_scale(&img, 2, KernelKind::Linear, 0.01).is_ok());
    assert!(gr_single_scale(&img, 6, KernelKind::Linear, 0.01).is_err());
}
