use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::args::{FeatureArgs, MaskArgs, ProbeArgs};
use super::commands::{load_corpus, load_labelled};
use super::config::{overlay, resolve_pretrain, resolve_probe, PretrainRun, ProbeRunConfig};
use super::manifest::{hash_inputs, now, RunManifest};
use crate::error::{Error, Result};
use crate::eval::evaluate_few_shot;
use crate::imagery::{Dataset, SarImage};
use crate::model::ModelConfig;
use crate::rng::{derive_seed, stream};
use crate::trainer::pretrain;

/// Named architecture presets for the model-size axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Tiny,
    Small,
    Desk,
}

impl ModelSize {
    pub fn name(self) -> &'static str {
        match self {
            ModelSize::Tiny => "tiny",
            ModelSize::Small => "small",
            ModelSize::Desk => "desk",
        }
    }

    /// Applies the preset to `base`, keeping its patch, window and target sizes.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (embed_dim, encoder_depth, predictor_depth, heads) = match self {
            ModelSize::Tiny => (64, 2, 1, 2),
            ModelSize::Small => (96, 3, 2, 3),
            ModelSize::Desk => (128, 4, 2, 4),
        };
        let mut m = ModelConfig {
            embed_dim,
            encoder_depth,
            predictor_depth,
            heads,
            ..base.clone()
        };
        if m.paper_faithful {
            m = m.with_paper_faithful();
        }
        m
    }
}

/// Grid axes. An absent axis contributes its base value; a present axis
/// must be non-empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub dataset_fraction: Option<Vec<f64>>,
    pub model_size: Option<Vec<ModelSize>>,
    pub epochs: Option<Vec<usize>>,
}

impl SweepAxes {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_fraction.is_none() && self.model_size.is_none() && self.epochs.is_none() {
            return Err(Error::config(
                "sweep.axes must list at least one of dataset_fraction, model_size, epochs",
            ));
        }
        for (name, len) in [
            ("dataset_fraction", self.dataset_fraction.as_ref().map(Vec::len)),
            ("model_size", self.model_size.as_ref().map(Vec::len)),
            ("epochs", self.epochs.as_ref().map(Vec::len)),
        ] {
            if len == Some(0) {
                return Err(Error::config(format!("sweep axis {name} is empty")));
            }
        }
        if let Some(f) = &self.dataset_fraction {
            if let Some(bad) = f.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
                return Err(Error::config(format!("dataset_fraction {bad} must lie in (0, 1]")));
            }
        }
        if self.epochs.as_ref().is_some_and(|e| e.contains(&0)) {
            return Err(Error::config("sweep epochs must be >= 1"));
        }
        Ok(())
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dataset_fraction: f64,
    pub model_size: Option<ModelSize>,
    pub epochs: usize,
}

/// A resolved sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axes: SweepAxes,
    pub pretrain: PretrainRun,
    pub probe: ProbeRunConfig,
}

impl SweepConfig {
    /// Grid points, fraction-major then model size then epochs.
    pub fn points(&self) -> Vec<SweepPoint> {
        let fractions = self.axes.dataset_fraction.clone().unwrap_or_else(|| vec![1.0]);
        let sizes: Vec<Option<ModelSize>> = match &self.axes.model_size {
            Some(s) => s.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let epochs = self.axes.epochs.clone().unwrap_or_else(|| vec![self.pretrain.train.epochs]);
        let mut out = Vec::new();
        for &f in &fractions {
            for &s in &sizes {
                for &e in &epochs {
                    out.push(SweepPoint {
                        dataset_fraction: f,
                        model_size: s,
                        epochs: e,
                    });
                }
            }
        }
        out
    }

    /// Pretraining run for one grid point; the corpus subset is chosen by
    /// [`subset_indices`].
    pub fn point_run(&self, point: &SweepPoint) -> Result<PretrainRun> {
        let mut run = self.pretrain.clone();
        run.train.epochs = point.epochs;
        if run.train.warmup_epochs >= point.epochs {
            run.train.warmup_epochs = point.epochs - 1;
        }
        if let Some(size) = point.model_size {
            run.model = size.apply(&run.model);
        }
        run.train.validate()?;
        run.model.validate()?;
        Ok(run)
    }
}

/// Sorted indices of a `fraction` subset of `n` images: a prefix of a seeded
/// permutation, so smaller fractions are nested in larger ones.
pub fn subset_indices(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let keep = ((fraction * n as f64).round() as usize).clamp(1, n.max(1));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::SUBSET])));
    let mut out: Vec<usize> = perm.into_iter().take(keep).collect();
    out.sort_unstable();
    out
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub dataset_fraction: f64,
    pub model_size: String,
    pub epochs: usize,
    pub corpus_size: usize,
    pub params: usize,
    pub shots: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    /// `ok`, `diverged` or `failed`.
    pub status: String,
    pub error: String,
}

fn run_point(
    cfg: &SweepConfig,
    index: usize,
    point: &SweepPoint,
    corpus: &[SarImage],
    labelled: &Dataset,
    out: &Path,
) -> Vec<SweepRow> {
    let subset = subset_indices(corpus.len(), point.dataset_fraction, cfg.pretrain.train.seed);
    let base = SweepRow {
        point: index,
        dataset_fraction: point.dataset_fraction,
        model_size: point.model_size.map_or("base", ModelSize::name).to_string(),
        epochs: point.epochs,
        corpus_size: subset.len(),
        params: 0,
        shots: 0,
        first_loss: None,
        final_loss: None,
        mean_accuracy: None,
        std_accuracy: None,
        status: "ok".into(),
        error: String::new(),
    };
    let result = (|| -> Result<Vec<SweepRow>> {
        let run = cfg.point_run(point)?;
        let images: Vec<SarImage> = subset.iter().map(|&i| corpus[i].clone()).collect();
        let dir = out.join(format!("point_{index:03}"));
        let outcome = pretrain(&images, &run.train, &run.model, Some(&dir))?;
        let report = evaluate_few_shot(
            &outcome.state,
            labelled,
            &cfg.probe.shots,
            cfg.probe.repeats,
            &cfg.probe.probe,
            cfg.probe.seed,
        )?;
        Ok(report
            .summary
            .iter()
            .map(|s| SweepRow {
                params: outcome.state.num_params(),
                shots: s.shots,
                first_loss: outcome.log.first_loss(),
                final_loss: outcome.log.last_loss(),
                mean_accuracy: Some(s.mean),
                std_accuracy: Some(s.std),
                ..base.clone()
            })
            .collect())
    })();
    match result {
        Ok(rows) => rows,
        Err(e) => {
            let status = if e.is_divergence() { "diverged" } else { "failed" };
            cfg.probe
                .shots
                .iter()
                .map(|&shots| SweepRow {
                    shots,
                    status: status.into(),
                    error: e.to_string(),
                    ..base.clone()
                })
                .collect()
        }
    }
}

/// Runs every grid point (pretrain then probe) and writes `sweep.csv`.
/// Failed points are recorded and the sweep continues. With `parallel`,
/// points run on worker threads; rows come back in grid order and match a
/// sequential run exactly.
pub fn run_sweep(cfg: &SweepConfig, out: &Path, parallel: bool) -> Result<Vec<SweepRow>> {
    cfg.axes.validate()?;
    let corpus = load_corpus(&cfg.pretrain)?;
    let labelled = load_labelled(&cfg.probe)?;
    let points = cfg.points();
    std::fs::create_dir_all(out)?;
    let per_point: Vec<Vec<SweepRow>> = if parallel {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(points.len());
        let mut slots: Vec<Option<Vec<SweepRow>>> = vec![None; points.len()];
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let (points, corpus, labelled) = (&points, &corpus, &labelled);
                    s.spawn(move || {
                        (w..points.len())
                            .step_by(workers)
                            .map(|i| (i, run_point(cfg, i, &points[i], corpus, labelled, out)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, rows) in h.join().expect("sweep worker panicked") {
                    slots[i] = Some(rows);
                }
            }
        });
        slots.into_iter().map(|r| r.unwrap_or_default()).collect()
    } else {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| run_point(cfg, i, p, &corpus, &labelled, out))
            .collect()
    };
    let rows: Vec<SweepRow> = per_point.into_iter().flatten().collect();
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Resolves `{"axes": .., "pretrain": .., "probe": ..}` plus flags.
#[allow(clippy::too_many_arguments)]
pub fn resolve_sweep(
    mut file: Map<String, Value>,
    feature: &FeatureArgs,
    mask: &MaskArgs,
    probe: &ProbeArgs,
    seed: Option<u64>,
    paper_faithful: bool,
) -> Result<SweepConfig> {
    let axes: SweepAxes = match file.remove("axes") {
        Some(Value::Object(m)) => overlay(&SweepAxes::default(), m)?,
        Some(_) => return Err(Error::config("sweep: 'axes' must be an object")),
        None => SweepAxes::default(),
    };
    let section = |file: &mut Map<String, Value>, key: &str| -> Result<Map<String, Value>> {
        match file.remove(key) {
            Some(Value::Object(m)) => Ok(m),
            None => Ok(Map::new()),
            Some(_) => Err(Error::config(format!("sweep: '{key}' must be an object"))),
        }
    };
    let pre = section(&mut file, "pretrain")?;
    let pro = section(&mut file, "probe")?;
    if let Some(k) = file.keys().next() {
        return Err(Error::config(format!("sweep: unknown key '{k}'")));
    }
    axes.validate()?;
    let pretrain = resolve_pretrain(pre, feature, mask, seed, None, paper_faithful)?;
    let probe = resolve_probe(pro, probe, seed, None, None, None)?;
    Ok(SweepConfig {
        axes,
        pretrain,
        probe,
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_sweep_command(
    file: Map<String, Value>,
    feature: &FeatureArgs,
    mask: &MaskArgs,
    probe: &ProbeArgs,
    seed: Option<u64>,
    paper_faithful: bool,
    parallel: bool,
    out: &Path,
) -> Result<()> {
    let started = now();
    let cfg = resolve_sweep(file, feature, mask, probe, seed, paper_faithful)?;
    let rows = run_sweep(&cfg, out, parallel)?;
    for r in &rows {
        eprintln!(
            "point {} fraction {} size {} epochs {} n={} -> {} {}",
            r.point,
            r.dataset_fraction,
            r.model_size,
            r.epochs,
            r.corpus_size,
            r.mean_accuracy.map_or("-".to_string(), |a| format!("{a:.4}")),
            r.status
        );
    }
    let config = serde_json::to_value(&cfg)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    let inputs: Vec<PathBuf> = cfg.pretrain.data.iter().chain(cfg.probe.data.iter()).cloned().collect();
    let input_refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    RunManifest {
        command: "sweep".into(),
        input_hash: hash_inputs(&config, &input_refs)?,
        config: json!(config),
        seed: cfg.pretrain.train.seed,
        artifacts: vec!["sweep.csv".into(), "config.json".into()],
        started_at: started,
        finished_at: now(),
    }
    .write(out)
}
