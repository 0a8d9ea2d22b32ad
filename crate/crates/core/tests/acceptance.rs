//! Acceptance criteria. 1-4 run with the normal test pass; 5-9 pretrain the
//! desk-default model on the full synthetic corpus several times (hours on one
//! core) and are ignored by default:
//!
//!     cargo test --release -p sarjepa-core --test acceptance -- --include-ignored --test-threads=1
//!
//! Every criterion writes one PASS/FAIL line to stderr.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::gradcheck;
use sarjepa::cli::{
    resolve_pretrain, resolve_probe, run_pretrain, run_probe, run_sweep, FeatureArgs, MaskArgs, ProbeArgs,
    PretrainRun, ProbeRunConfig, SweepAxes, SweepConfig, SweepRow,
};
use sarjepa::eval::{attention_distance, image_tokens, FewShotReport, ProbeMode, ShotSummary};
use sarjepa::features::{
    centered_gradient, gr_single_scale, hog_target, multi_scale_target, roa_ratios, GradientKind, KernelKind,
    RoaKernelBank, TargetKind, HOG_BINS,
};
use sarjepa::masking::{global_mask_plan, mask_plan, sample_local_windows, PatchGrid};
use sarjepa::model::{ModelConfig, ModelState, TokenBatch};
use sarjepa::trainer::{PretrainOutcome, RunLog};
use serde_json::Map;

const SEED: u64 = 0;

fn report(n: u32, name: &str, pass: bool, detail: &str) -> bool {
    let line = format!("{} criterion {n} ({name}): {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

#[test]
fn criterion_1_cfar_invariance() {
    let t0 = Instant::now();
    let (mut worst_gr, mut worst_grad) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let img = common::random_image(64, 64, 1000 + i);
        let base_grad = centered_gradient(&img);
        for kind in [KernelKind::Linear, KernelKind::Gaussian] {
            let base: Vec<_> = [5, 9, 13, 17]
                .iter()
                .map(|&r| gr_single_scale(&img, r, kind, 0.0).unwrap())
                .collect();
            for c in [0.1, 1.0, 37.5, 1000.0] {
                let scaled = img.scaled(c).unwrap();
                for (g, &r) in base.iter().zip(&[5, 9, 13, 17]) {
                    let s = gr_single_scale(&scaled, r, kind, 0.0).unwrap();
                    for (a, b) in [(&g.g_h, &s.g_h), (&g.g_v, &s.g_v), (&g.g_m, &s.g_m)] {
                        for (x, y) in a.iter().zip(b.iter()) {
                            worst_gr = worst_gr.max(rel(*x, *y));
                        }
                    }
                }
                if kind == KernelKind::Linear {
                    let s = centered_gradient(&scaled);
                    for (x, y) in base_grad.g_m.iter().zip(&s.g_m) {
                        worst_grad = worst_grad.max(rel(c * x, *y));
                    }
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    // "exactly" up to rounding: a centred difference of close pixels cancels
    let pass = worst_gr < 1e-6 && worst_grad < 1e-9 && secs < 60.0;
    report(
        1,
        "ratio-gradient CFAR invariance",
        pass,
        &format!("max GR rel err {worst_gr:.2e}, max |grad| scaling rel err {worst_grad:.2e}, {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_oracle_equivalence() {
    let t0 = Instant::now();
    let mut worst = [0.0f64; 5];
    for i in 0..20u64 {
        let (h, w) = (12 + (i as usize % 3) * 4, 16 + (i as usize % 2) * 8);
        let img = common::random_image(h, w, 2000 + i);
        let kind = if i % 2 == 0 { KernelKind::Linear } else { KernelKind::Gaussian };
        let r = 1 + (i as usize % 5);
        let eps = if i % 3 == 0 { 0.0 } else { 0.01 };

        let (r1, r3) = roa_ratios(&img, r, kind, eps).unwrap();
        let (o1, o3) = common::roa(&img, r, kind, eps);
        worst[0] = worst[0].max(common::max_rel(&r1, &o1)).max(common::max_rel(&r3, &o3));

        let g = gr_single_scale(&img, r, kind, eps).unwrap();
        let (gh, gv, gm) = common::gr(&img, r, kind, eps);
        for (a, b) in [(&g.g_h, &gh), (&g.g_v, &gv), (&g.g_m, &gm)] {
            worst[1] = worst[1].max(common::max_abs(a, b));
        }

        let scales = vec![1, 2 + (i as usize % 3), 5];
        let bank = RoaKernelBank::new(scales.clone(), kind, eps).unwrap();
        let tf = multi_scale_target(&img, &bank).unwrap();
        worst[2] = worst[2].max(common::max_abs(tf.data(), &common::multi_scale(&img, &scales, kind, eps)));

        let hog = hog_target(&img, 4, HOG_BINS, GradientKind::Differential, None).unwrap();
        worst[3] = worst[3].max(common::max_abs(hog.data(), &common::hog(&img, 4, HOG_BINS)));
        let lin = RoaKernelBank::new(vec![1, 3], KernelKind::Linear, 0.01).unwrap();
        let sar = hog_target(&img, 4, HOG_BINS, GradientKind::Ratio, Some(&lin)).unwrap();
        worst[3] = worst[3].max(common::max_abs(sar.data(), &common::sar_hog(&img, &[1, 3], 0.01, 4, HOG_BINS)));
    }

    let cfg = ModelConfig {
        patch_side: 4,
        embed_dim: 16,
        encoder_depth: 2,
        predictor_depth: 1,
        heads: 2,
        mlp_ratio: 2,
        target_dim: 16,
        window_side: 4,
        paper_faithful: false,
    };
    for i in 0..20u64 {
        let state = ModelState::<f32>::init(&cfg, 3000 + i).unwrap();
        let img = common::random_image(16, 16, 4000 + i);
        let rows = attention_distance(&state, std::slice::from_ref(&img)).unwrap();
        let (tokens, side) = image_tokens(&img, 4).unwrap();
        let n = tokens.nrows();
        let (_, cache) = state.forward(&TokenBatch::new(tokens, vec![false; n], side).unwrap(), true).unwrap();
        for layer in 0..cfg.encoder_depth {
            let oracle = common::attention_distance(cache.attention_maps(layer), 1, cfg.heads, side, 4);
            for r in rows.iter().filter(|r| r.layer == layer) {
                worst[4] = worst[4].max((r.mean_distance_px - oracle[r.head]).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst[0] < 1e-6 && worst[1] < 1e-6 && worst[2] < 1e-6 && worst[3] < 1e-5 && worst[4] < 1e-6 && secs < 120.0;
    report(
        2,
        "oracle equivalence",
        pass,
        &format!(
            "roa {:.1e}, gr {:.1e}, multi-scale {:.1e}, hog {:.1e}, attention {:.1e}, {secs:.1}s",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_gradient_check() {
    let t0 = Instant::now();
    let cfg = gradcheck::tiny_config();
    let mut worst = (String::new(), 0.0f64);
    let mut groups = 0;
    let masks = [
        vec![true, false, true, true, false, true, false, false],
        vec![false, true, false, false],
        vec![false; 4],
    ];
    for (k, masked) in masks.into_iter().enumerate() {
        let mut state = gradcheck::perturbed_state(&cfg, 30 + k as u64);
        let p = gradcheck::problem(&cfg, 40 + k as u64, masked);
        for (name, e) in gradcheck::group_errors(&mut state, &p, 1e-5) {
            // the mask token is untouched when nothing is masked
            if !e.is_finite() && name == "mask_token" && k == 2 {
                continue;
            }
            groups += 1;
            if !(e <= worst.1) {
                worst = (name, e);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst.1 < 1e-4 && secs < 120.0;
    report(
        3,
        "gradient check",
        pass,
        &format!("{groups} parameter groups, worst {} rel err {:.2e}, {secs:.1}s", worst.0, worst.1),
    );
    assert!(pass);
}

#[test]
fn criterion_4_mask_statistics() {
    let t0 = Instant::now();
    let grid = PatchGrid::new(8, 8, 8).unwrap();
    let mut exact = true;
    for w in 2..=8usize {
        for q in 0..=4usize {
            let ratio = q as f64 / 4.0;
            let want = (2 * q * w * w + 4) / 8;
            let windows = sample_local_windows(&grid, 4, w, (w * 10 + q) as u64).unwrap();
            let plan = mask_plan(&windows, ratio, 7).unwrap();
            exact &= plan.masked.iter().all(|m| m.len() == want);
        }
    }
    let windows = sample_local_windows(&grid, 1, 4, 0).unwrap();
    let (mut local, mut global) = ([0usize; 16], [0usize; 64]);
    for seed in 0..10_000u64 {
        for &k in &mask_plan(&windows, 0.75, seed).unwrap().masked[0] {
            local[k] += 1;
        }
        for &k in &global_mask_plan(&grid, 0.75, seed).unwrap().masked[0] {
            global[k] += 1;
        }
    }
    let dev = local
        .iter()
        .chain(&global)
        .map(|&c| (c as f64 / 1e4 - 0.75).abs())
        .fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    let pass = exact && dev <= 0.02 && secs < 60.0;
    report(
        4,
        "mask statistics",
        pass,
        &format!("counts exact: {exact}, max frequency deviation {dev:.4}, {secs:.1}s"),
    );
    assert!(pass);
}

// ---- training criteria -------------------------------------------------------

struct Trained {
    dir: PathBuf,
    outcome: Result<PretrainOutcome, String>,
    probe: Option<FewShotReport>,
    seconds: f64,
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn pretrain_config(feature: TargetKind) -> PretrainRun {
    let flags = FeatureArgs {
        feature: Some(feature),
        ..FeatureArgs::default()
    };
    resolve_pretrain(Map::new(), &flags, &MaskArgs::default(), Some(SEED), None, false).unwrap()
}

fn probe_config(checkpoint: Option<PathBuf>) -> ProbeRunConfig {
    let args = ProbeArgs {
        shots: Some("10".into()),
        repeats: Some(10),
        mode: Some(ProbeMode::Linear),
    };
    resolve_probe(Map::new(), &args, Some(SEED), checkpoint, None, None).unwrap()
}

fn train_and_probe(name: &str, feature: TargetKind) -> Trained {
    let dir = root().join(name);
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = Instant::now();
    let run = pretrain_config(feature);
    let outcome = run_pretrain(&run, &dir.join("pretrain"), false).map_err(|e| e.to_string());
    let probe = outcome.as_ref().ok().map(|_| {
        run_probe(&probe_config(Some(dir.join("pretrain/checkpoint"))), &dir.join("probe")).unwrap()
    });
    Trained {
        dir,
        outcome,
        probe,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn main_run() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| train_and_probe("grlin", TargetKind::GrLin))
}

fn repeat_run() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| train_and_probe("grlin_repeat", TargetKind::GrLin))
}

fn pixel_run() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| train_and_probe("pixel", TargetKind::Pixel))
}

fn random_init_probe() -> &'static FewShotReport {
    static RUN: OnceLock<FewShotReport> = OnceLock::new();
    RUN.get_or_init(|| run_probe(&probe_config(None), &root().join("random_init")).unwrap())
}

fn ten_shot(r: &FewShotReport) -> &ShotSummary {
    r.summary_for(10).unwrap()
}

#[test]
#[ignore = "pretrains the desk model on 2,000 images several times; run with --include-ignored"]
fn criterion_5_pretraining_convergence() {
    let run = main_run();
    let detail;
    let pass = match &run.outcome {
        Err(e) => {
            detail = format!("run failed: {e}");
            false
        }
        Ok(out) => {
            let first = out.log.first_loss().unwrap();
            let last = out.log.last_loss().unwrap();
            let late: Vec<_> = out.log.records.iter().filter(|r| r.epoch > 5).collect();
            let flagged = late.iter().filter(|r| r.collapsed()).count();
            let min_var = late.iter().map(|r| r.pred_variance).fold(f64::INFINITY, f64::min);
            detail = format!(
                "epochs {}, epoch-1 loss {first:.4}, final loss {last:.4} (ratio {:.3}, need <= 0.5), \
                 collapse flags after epoch 5: {flagged} (min pred_variance {min_var:.2e}), {:.0}s",
                out.log.records.len(),
                last / first,
                run.seconds
            );
            out.log.records.len() == 50 && last <= 0.5 * first && flagged == 0
        }
    };
    report(5, "pretraining convergence", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
#[ignore = "pretrains the desk model on 2,000 images several times; run with --include-ignored"]
fn criterion_6_probe_gain() {
    let random = ten_shot(random_init_probe());
    let (pass, detail) = match main_run().probe.as_ref() {
        None => (false, "no checkpoint: pretraining failed".to_string()),
        Some(p) => {
            let trained = ten_shot(p);
            let gain = trained.mean - random.mean;
            (
                gain >= 0.10,
                format!(
                    "pretrained {:.4} ± {:.4}, random init {:.4} ± {:.4}, gain {:+.2} points (need >= +10)",
                    trained.mean,
                    trained.std,
                    random.mean,
                    random.std,
                    100.0 * gain
                ),
            )
        }
    };
    report(6, "probe gain over random init", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
#[ignore = "pretrains the desk model on 2,000 images several times; run with --include-ignored"]
fn criterion_7_target_feature_trend() {
    // soft criterion: a violation is reported and analysed, not failed
    let (gr, px) = (main_run(), pixel_run());
    match (gr.probe.as_ref(), px.probe.as_ref()) {
        (Some(g), Some(p)) => {
            let (g, p) = (ten_shot(g), ten_shot(p));
            report(
                7,
                "GR_lin target >= pixel target (soft)",
                g.mean >= p.mean,
                &format!("grlin {:.4} ± {:.4}, pixel {:.4} ± {:.4}", g.mean, g.std, p.mean, p.std),
            );
        }
        _ => {
            report(7, "GR_lin target >= pixel target (soft)", false, "a pretraining run failed");
        }
    }
}

#[test]
#[ignore = "pretrains the desk model on 2,000 images several times; run with --include-ignored"]
fn criterion_8_scaling_monotonicity() {
    let base = pretrain_config(TargetKind::GrLin);
    let cfg = SweepConfig {
        axes: SweepAxes {
            dataset_fraction: Some(vec![0.25, 0.5]),
            ..SweepAxes::default()
        },
        pretrain: base,
        probe: probe_config(None),
    };
    let dir = root().join("fractions");
    let _ = std::fs::remove_dir_all(&dir);
    let mut rows: Vec<SweepRow> = run_sweep(&cfg, &dir, false).unwrap();
    // fraction 1.0 keeps every image in corpus order with the same seeds, so
    // it is the main run (the single-point sweep test checks this equality)
    let main = main_run();
    let full = main.probe.as_ref().map(ten_shot);
    rows.push(SweepRow {
        dataset_fraction: 1.0,
        corpus_size: 2000,
        mean_accuracy: full.map(|s| s.mean),
        std_accuracy: full.map(|s| s.std),
        status: if full.is_some() { "ok".into() } else { "failed".into() },
        ..rows[0].clone()
    });
    let mut pass = rows.iter().all(|r| r.status == "ok");
    let mut parts = Vec::new();
    for r in &rows {
        parts.push(format!(
            "{} ({} images): {:.4} ± {:.4}",
            r.dataset_fraction,
            r.corpus_size,
            r.mean_accuracy.unwrap_or(f64::NAN),
            r.std_accuracy.unwrap_or(f64::NAN)
        ));
    }
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if let (Some(ma), Some(mb), Some(sa), Some(sb)) = (a.mean_accuracy, b.mean_accuracy, a.std_accuracy, b.std_accuracy) {
            pass &= mb >= ma - sa.max(sb);
        }
    }
    let detail = parts.join(", ");
    report(8, "scaling monotonicity over dataset fraction", pass, &detail);
    assert!(pass, "{detail}");
}

fn csv_without_seconds(path: &Path) -> Vec<(usize, u64, u64, u64)> {
    RunLog::read_csv(path)
        .unwrap()
        .records
        .iter()
        .map(|r| (r.epoch, r.loss.to_bits(), r.lr.to_bits(), r.pred_variance.to_bits()))
        .collect()
}

#[test]
#[ignore = "pretrains the desk model on 2,000 images several times; run with --include-ignored"]
fn criterion_9_reproducibility() {
    let (a, b) = (main_run(), repeat_run());
    let read = |t: &Trained, rel: &str| std::fs::read(t.dir.join(rel)).ok();
    let mut checks = Vec::new();
    let ok = a.outcome.is_ok() && b.outcome.is_ok();
    checks.push(("both runs completed", ok));
    if ok {
        checks.push((
            "runlog.csv (wall-clock seconds excluded)",
            csv_without_seconds(&a.dir.join("pretrain/runlog.csv")) == csv_without_seconds(&b.dir.join("pretrain/runlog.csv")),
        ));
        for f in ["probe/metrics.csv", "probe/summary.csv", "pretrain/checkpoint/tensors.bin", "pretrain/checkpoint/manifest.json"] {
            let (x, y) = (read(a, f), read(b, f));
            checks.push((f, x.is_some() && x == y));
        }
    }
    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(n, ok)| format!("{n}: {}", if *ok { "identical" } else { "DIFFERENT" }))
        .collect::<Vec<_>>()
        .join(", ");
    report(9, "reproducibility", pass, &detail);
    assert!(pass, "{detail}");
}

