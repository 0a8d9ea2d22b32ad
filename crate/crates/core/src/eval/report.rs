use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::encode_dataset;
use super::probe::{probe, probe_features, ProbeConfig, ProbeMode};
use super::split::make_few_shot_split;
use crate::error::{Error, Result};
use crate::imagery::Dataset;
use crate::model::ModelState;
use crate::rng::{derive_seed, stream};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub shots: usize,
    pub repeat: usize,
    pub seed: u64,
    pub mode: ProbeMode,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shots: usize,
    pub mean: f64,
    /// Sample standard deviation over repeats (0 for a single repeat).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FewShotReport {
    pub runs: Vec<ProbeRun>,
    pub summary: Vec<ShotSummary>,
}

impl FewShotReport {
    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.runs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_metrics(path: &Path) -> Result<Vec<ProbeRun>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<ProbeRun>, _>>()?)
    }

    pub fn summary_for(&self, shots: usize) -> Option<&ShotSummary> {
        self.summary.iter().find(|s| s.shots == shots)
    }

    /// Mean and sample standard deviation of `values`.
    pub fn mean_std(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, std)
    }
}

/// Runs `repeats` seeded splits per shot count. Split seeds derive from
/// `seed`, the shot count and the repeat index.
pub fn evaluate_few_shot(
    state: &ModelState<f32>,
    ds: &Dataset,
    shots: &[usize],
    repeats: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<FewShotReport> {
    if shots.is_empty() || repeats == 0 {
        return Err(Error::config("need at least one shot count and one repeat"));
    }
    cfg.validate()?;
    let features = match cfg.mode {
        ProbeMode::Linear => Some(encode_dataset(state, &ds.images)?),
        ProbeMode::Finetune => None,
    };
    let mut report = FewShotReport::default();
    for &n in shots {
        let mut accs = Vec::with_capacity(repeats);
        for repeat in 0..repeats {
            let split_seed = derive_seed(seed, &[stream::SPLIT, n as u64, repeat as u64]);
            let split = make_few_shot_split(ds, n, split_seed)?;
            let accuracy = match &features {
                Some(f) => probe_features(f.view(), &ds.labels, ds.n_classes(), &split, cfg)?,
                None => probe(state, ds, &split, cfg)?,
            };
            accs.push(accuracy);
            report.runs.push(ProbeRun {
                shots: n,
                repeat,
                seed: split_seed,
                mode: cfg.mode,
                accuracy,
            });
        }
        let (mean, std) = FewShotReport::mean_std(&accs);
        report.summary.push(ShotSummary { shots: n, mean, std });
    }
    Ok(report)
}
