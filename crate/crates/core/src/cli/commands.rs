use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::args::{Cli, Command, CommonArgs, FeatureArgs};
use super::config::{apply_feature_flags, overlay, read_config, resolve_pretrain, resolve_probe, PretrainRun, ProbeRunConfig};
use super::manifest::{hash_inputs, now, RunManifest};
use super::sweep::run_sweep_command;
use crate::error::{Error, Result};
use crate::eval::{attention_distance, evaluate_few_shot, FewShotReport};
use crate::features::{KernelKind, TargetKind, TargetSpec};
use crate::imagery::{generate_corpus, read_image, CorpusSpec, Dataset, ImageFormat, UNLABELED_CLASS};
use crate::model::ModelState;
use crate::rng::{derive_seed, stream};
use crate::trainer::{pretrain_with, PretrainOutcome};

/// Corpus seeds: pretraining images use sub-stream 0, labelled images 1.
pub(crate) fn corpus_seed(seed: u64, labelled: bool) -> u64 {
    derive_seed(seed, &[stream::SCENE, labelled as u64])
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| Error::config("--out is required"))
}

pub(crate) fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let file = read_config(common.config.as_deref())?;
    match &cli.command {
        Command::Gen { .. } => {
            let cfg: GenConfig = overlay(&GenConfig::default(), file)?;
            run_gen(&cfg, common.seed.unwrap_or(0), &out_dir(common)?)
        }
        Command::Features {
            feature,
            input,
            patch_side,
            ..
        } => run_features_command(file, feature, input, *patch_side, &out_dir(common)?),
        Command::Pretrain {
            feature,
            mask,
            data,
            paper_faithful,
            ..
        } => {
            let run = resolve_pretrain(file, feature, mask, common.seed, data.clone(), *paper_faithful)?;
            run_pretrain(&run, &out_dir(common)?, true).map(|_| ())
        }
        Command::Probe {
            probe,
            checkpoint,
            data,
            split,
            ..
        } => {
            let run = resolve_probe(file, probe, common.seed, checkpoint.clone(), data.clone(), split.clone())?;
            let report = run_probe(&run, &out_dir(common)?)?;
            for s in &report.summary {
                println!("shots={} mean={:.4} std={:.4}", s.shots, s.mean, s.std);
            }
            Ok(())
        }
        Command::Attn {
            checkpoint,
            data,
            split,
            ..
        } => {
            let run = resolve_probe(file, &Default::default(), common.seed, checkpoint.clone(), data.clone(), split.clone())?;
            run_attn(&run, &out_dir(common)?)
        }
        Command::Sweep {
            feature,
            mask,
            probe,
            paper_faithful,
            parallel,
            ..
        } => run_sweep_command(file, feature, mask, probe, common.seed, *paper_faithful, *parallel, &out_dir(common)?),
    }
}

/// `gen` configuration: a pretraining corpus and a labelled evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub pretrain: CorpusSpec,
    pub labeled: CorpusSpec,
    pub format: ImageFormat,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            pretrain: CorpusSpec::default(),
            labeled: super::config::default_labelled_corpus(),
            format: ImageFormat::F32,
        }
    }
}

/// Writes `<out>/pretrain/unlabeled/*` and `<out>/labeled/<class>/*`.
pub fn run_gen(cfg: &GenConfig, seed: u64, out: &Path) -> Result<()> {
    let started = now();
    let pre = generate_corpus(&cfg.pretrain, corpus_seed(seed, false))?;
    let unlabeled = Dataset {
        class_names: vec![UNLABELED_CLASS.to_string()],
        labels: vec![0; pre.len()],
        images: pre.images,
    };
    unlabeled.save(out, "pretrain", cfg.format)?;
    let lab = generate_corpus(&cfg.labeled, corpus_seed(seed, true))?;
    lab.save(out, "labeled", cfg.format)?;
    let config = json!({ "gen": cfg, "seed": seed });
    RunManifest {
        command: "gen".into(),
        input_hash: hash_inputs(&config, &[])?,
        config,
        seed,
        artifacts: vec!["pretrain/".into(), "labeled/".into()],
        started_at: started,
        finished_at: now(),
    }
    .write(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureSidecar {
    feature: TargetKind,
    channels: usize,
    height: usize,
    width: usize,
    scales: Vec<usize>,
    kernel_kind: Option<KernelKind>,
    epsilon: f64,
}

fn run_features_command(
    mut file: serde_json::Map<String, Value>,
    flags: &FeatureArgs,
    input: &Path,
    patch_side: Option<usize>,
    out: &Path,
) -> Result<()> {
    let file_patch = file.remove("patch_side").and_then(|v| v.as_u64()).map(|v| v as usize);
    let mut spec_map = serde_json::Map::new();
    for (k, v) in file {
        let key = if k == "feature" { "kind".to_string() } else { k };
        spec_map.insert(key, v);
    }
    let mut spec: TargetSpec = overlay(&TargetSpec::default(), spec_map)?;
    let mut holder = crate::trainer::PretrainConfig {
        target_feature: spec.kind,
        scales: spec.scales.clone(),
        epsilon: spec.epsilon,
        ..Default::default()
    };
    apply_feature_flags(&mut holder, flags)?;
    spec.kind = holder.target_feature;
    spec.scales = holder.scales;
    spec.epsilon = holder.epsilon;
    run_features(&spec, input, patch_side.or(file_patch).unwrap_or(8), out)
}

/// Writes `<out>/feature.f32` (channel-major little-endian planes) and
/// `<out>/feature.json`.
pub fn run_features(spec: &TargetSpec, input: &Path, patch_side: usize, out: &Path) -> Result<()> {
    let started = now();
    let img = read_image(input)?;
    let tf = spec.feature(&img, patch_side)?;
    std::fs::create_dir_all(out)?;
    let bytes: Vec<u8> = tf.data().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    std::fs::write(out.join("feature.f32"), bytes)?;
    let kernel_kind = match spec.kind {
        TargetKind::GrLin | TargetKind::SarHog => Some(KernelKind::Linear),
        TargetKind::GrGau => Some(KernelKind::Gaussian),
        _ => None,
    };
    let side = FeatureSidecar {
        feature: spec.kind,
        channels: tf.channels(),
        height: tf.height(),
        width: tf.width(),
        scales: spec.scales.clone(),
        kernel_kind,
        epsilon: spec.epsilon,
    };
    std::fs::write(out.join("feature.json"), serde_json::to_string_pretty(&side)?)?;
    let config = json!({ "target": spec, "patch_side": patch_side, "input": input });
    RunManifest {
        command: "features".into(),
        input_hash: hash_inputs(&config, &[input])?,
        config,
        seed: 0,
        artifacts: vec!["feature.f32".into(), "feature.json".into()],
        started_at: started,
        finished_at: now(),
    }
    .write(out)
}

pub(crate) fn load_corpus(run: &PretrainRun) -> Result<Vec<crate::imagery::SarImage>> {
    match &run.data {
        Some(root) => Ok(Dataset::load(root, &run.split)?.images),
        None => Ok(generate_corpus(&run.corpus, corpus_seed(run.train.seed, false))?.images),
    }
}

/// Pretrains, writing `runlog.csv`, `checkpoint/`, `config.json` and
/// `manifest.json` under `out`.
pub fn run_pretrain(run: &PretrainRun, out: &Path, verbose: bool) -> Result<PretrainOutcome> {
    let started = now();
    let corpus = load_corpus(run)?;
    std::fs::create_dir_all(out)?;
    let config = serde_json::to_value(run)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    let epochs = run.train.epochs;
    let mut report = |r: &crate::trainer::EpochRecord| {
        if verbose {
            eprintln!(
                "epoch {}/{epochs} loss {:.5} lr {:.3e} pred_var {:.3e} ({:.1}s)",
                r.epoch, r.loss, r.lr, r.pred_variance, r.seconds
            );
        }
    };
    let outcome = pretrain_with(&corpus, &run.train, &run.model, Some(out), &mut report)?;
    let inputs: Vec<&Path> = run.data.iter().map(|p| p.as_path()).collect();
    RunManifest {
        command: "pretrain".into(),
        input_hash: hash_inputs(&config, &inputs)?,
        config,
        seed: run.train.seed,
        artifacts: vec!["runlog.csv".into(), "checkpoint/".into(), "config.json".into()],
        started_at: started,
        finished_at: now(),
    }
    .write(out)?;
    Ok(outcome)
}

pub(crate) fn load_labelled(run: &ProbeRunConfig) -> Result<Dataset> {
    match &run.data {
        Some(root) => Dataset::load(root, &run.split),
        None => generate_corpus(&run.corpus, corpus_seed(run.seed, true)),
    }
}

pub(crate) fn load_state(run: &ProbeRunConfig) -> Result<ModelState<f32>> {
    match &run.checkpoint {
        Some(dir) => Ok(ModelState::<f32>::load(dir)?.0),
        None => ModelState::<f32>::init(&run.model, derive_seed(run.seed, &[stream::INIT])),
    }
}

fn probe_inputs(run: &ProbeRunConfig) -> Vec<&Path> {
    run.checkpoint.iter().chain(run.data.iter()).map(|p| p.as_path()).collect()
}

/// Writes `metrics.csv` (one row per split) and `summary.csv`.
pub fn run_probe(run: &ProbeRunConfig, out: &Path) -> Result<FewShotReport> {
    let started = now();
    let ds = load_labelled(run)?;
    let state = load_state(run)?;
    let report = evaluate_few_shot(&state, &ds, &run.shots, run.repeats, &run.probe, run.seed)?;
    std::fs::create_dir_all(out)?;
    report.write_metrics(&out.join("metrics.csv"))?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    for s in &report.summary {
        w.serialize(s)?;
    }
    w.flush()?;
    let config = serde_json::to_value(run)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    RunManifest {
        command: "probe".into(),
        input_hash: hash_inputs(&config, &probe_inputs(run))?,
        config,
        seed: run.seed,
        artifacts: vec!["metrics.csv".into(), "summary.csv".into(), "config.json".into()],
        started_at: started,
        finished_at: now(),
    }
    .write(out)?;
    Ok(report)
}

const ATTN_IMAGES: usize = 16;

/// Writes `attn.csv` from the first 16 labelled images.
pub fn run_attn(run: &ProbeRunConfig, out: &Path) -> Result<()> {
    let started = now();
    let ds = load_labelled(run)?;
    let state = load_state(run)?;
    let images: Vec<_> = ds.images.into_iter().take(ATTN_IMAGES).collect();
    let rows = attention_distance(&state, &images)?;
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("attn.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let config = serde_json::to_value(run)?;
    RunManifest {
        command: "attn".into(),
        input_hash: hash_inputs(&config, &probe_inputs(run))?,
        config,
        seed: run.seed,
        artifacts: vec!["attn.csv".into()],
        started_at: started,
        finished_at: now(),
    }
    .write(out)
}
