use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::sample::{prepare_sample, PreparedSample};
use super::{lr_at, AdamW};
use crate::error::{Error, Result};
use crate::features::{TargetKind, TargetSpec};
use crate::imagery::{AugConfig, SarImage};
use crate::masking::MaskMode;
use crate::model::{weighted_mse, CheckpointMeta, Grads, ModelConfig, ModelState, RngState, TokenBatch};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Prediction variance below this marks probable collapse.
pub const COLLAPSE_THRESHOLD: f64 = 1e-4;

const PROBE_IMAGES: usize = 16;

/// Pretraining hyperparameters. JSON keys mirror the field names; missing keys
/// take the desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub target_feature: TargetKind,
    pub scales: Vec<usize>,
    pub epsilon: f64,
    pub lpf_cutoff: f64,
    pub mask_mode: MaskMode,
    /// 0 selects PGCA mode: no masking, loss over every token.
    pub mask_ratio: f64,
    pub windows_per_image: usize,
    pub augmentation: AugConfig,
    pub seed: u64,
    /// Epoch interval for intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let spec = TargetSpec::default();
        Self {
            base_lr: 1e-3,
            weight_decay: 0.05,
            betas: (0.9, 0.95),
            batch_size: 32,
            epochs: 50,
            warmup_epochs: 5,
            target_feature: spec.kind,
            scales: spec.scales,
            epsilon: spec.epsilon,
            lpf_cutoff: spec.lpf_cutoff,
            mask_mode: MaskMode::Local,
            mask_ratio: 0.75,
            windows_per_image: 4,
            augmentation: AugConfig::default(),
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl PretrainConfig {
    /// 200 epochs, 20 warmup, batch 300.
    pub fn paper_faithful(self) -> Self {
        Self {
            epochs: 200,
            warmup_epochs: 20,
            batch_size: 300,
            ..self
        }
    }

    pub fn target_spec(&self) -> TargetSpec {
        TargetSpec {
            kind: self.target_feature,
            scales: self.scales.clone(),
            epsilon: self.epsilon,
            lpf_cutoff: self.lpf_cutoff,
        }
    }

    pub fn pgca(&self) -> bool {
        self.mask_ratio == 0.0
    }

    pub fn peak_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / 256.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs ({}) must be smaller than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.betas.0) || !beta_ok(self.betas.1) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::config(format!("mask_ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if self.windows_per_image == 0 {
            return Err(Error::config("windows_per_image must be >= 1"));
        }
        if self.scales.is_empty() {
            return Err(Error::config("scales must not be empty"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be non-negative"));
        }
        self.augmentation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
    pub pred_variance: f64,
}

impl EpochRecord {
    pub fn collapsed(&self) -> bool {
        self.pred_variance < COLLAPSE_THRESHOLD
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.epoch <= last.epoch {
                return Err(Error::config("run log epochs must increase"));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub state: ModelState<f32>,
    pub log: RunLog,
    pub global_step: u64,
}

#[derive(Serialize)]
struct DivergenceRecord<'a> {
    epoch: usize,
    global_step: u64,
    lr: f64,
    reason: &'a str,
}

fn stack(samples: &[PreparedSample]) -> Result<(TokenBatch<f32>, Array2<f32>, Vec<f64>)> {
    let side = samples[0].side;
    if samples.iter().any(|s| s.side != side) {
        return Err(Error::shape("samples in a batch must share the window side"));
    }
    let patches = concatenate(Axis(0), &samples.iter().map(|s| s.patches.view()).collect::<Vec<_>>())
        .map_err(|e| Error::shape(e.to_string()))?;
    let targets = concatenate(Axis(0), &samples.iter().map(|s| s.targets.view()).collect::<Vec<_>>())
        .map_err(|e| Error::shape(e.to_string()))?;
    let masked = samples.iter().flat_map(|s| s.masked.iter().copied()).collect();
    let scale = 1.0 / samples.len() as f64;
    let weights = samples.iter().flat_map(|s| s.weights.iter().map(move |w| w * scale)).collect();
    Ok((TokenBatch::new(patches, masked, side)?, targets, weights))
}

/// Loss of each sample on its own, without updating anything.
pub fn sample_losses(state: &ModelState<f32>, samples: &[PreparedSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let batch = TokenBatch::new(s.patches.clone(), s.masked.clone(), s.side)?;
            let (pred, _) = state.forward(&batch, false)?;
            Ok(weighted_mse(pred.view(), s.targets.view(), &s.weights)?.0)
        })
        .collect()
}

/// Mean over target dimensions of the variance of predictions across the
/// loss-bearing tokens of `probe` (masked tokens, or every token in PGCA mode).
pub fn collapse_diagnostic(state: &ModelState<f32>, probe: &[PreparedSample]) -> Result<f64> {
    let dim = state.config().target_dim;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for s in probe {
        let batch = TokenBatch::new(s.patches.clone(), s.masked.clone(), s.side)?;
        let (pred, _) = state.forward(&batch, false)?;
        for (i, row) in pred.rows().into_iter().enumerate() {
            if s.weights[i] > 0.0 {
                rows.push(row.iter().map(|v| *v as f64).collect());
            }
        }
    }
    if rows.is_empty() {
        return Ok(0.0);
    }
    let n = rows.len() as f64;
    let mut total = 0.0;
    for k in 0..dim {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        total += rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(total / dim as f64)
}

pub fn pretrain(
    corpus: &[SarImage],
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    out: Option<&Path>,
) -> Result<PretrainOutcome> {
    pretrain_with(corpus, cfg, model_cfg, out, &mut |_| {})
}

/// Runs pretraining, calling `on_epoch` after every completed epoch. With `out`
/// set, writes `runlog.csv` after each epoch, `checkpoint_epoch_NNN/` every
/// `checkpoint_every` epochs and `checkpoint/` at the end; on divergence a
/// `divergence.json` record is written before the error is returned.
pub fn pretrain_with(
    corpus: &[SarImage],
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    out: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::config("pretraining corpus is empty"));
    }
    cfg.validate()?;
    model_cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut state = ModelState::<f32>::init(model_cfg, derive_seed(cfg.seed, &[stream::INIT]))?;
    let mut grads = Grads::zeros_like(&state);
    let mut opt = AdamW::new(cfg.betas.0, cfg.betas.1, cfg.weight_decay);

    let n = corpus.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let peak = cfg.peak_lr();

    let probe_cfg = PretrainConfig {
        augmentation: AugConfig::identity(),
        ..cfg.clone()
    };
    let probe = corpus
        .iter()
        .take(PROBE_IMAGES)
        .enumerate()
        .map(|(i, img)| prepare_sample(img, &probe_cfg, model_cfg, derive_seed(cfg.seed, &[stream::PROBE, i as u64])))
        .collect::<Result<Vec<_>>>()?;

    let mut log = RunLog::default();
    let mut global_step = 0u64;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, &[stream::SHUFFLE, epoch as u64])));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            lr = lr_at(global_step as usize, total_steps, warmup_steps, peak);
            let samples = chunk
                .iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &[stream::SAMPLE, epoch as u64, i as u64]);
                    prepare_sample(&corpus[i], cfg, model_cfg, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let step = train_step(&mut state, &mut grads, &mut opt, &samples, lr);
            let loss = match step {
                Ok(l) => l,
                Err(e) => return Err(diverged(out, e, epoch + 1, global_step, lr)),
            };
            loss_sum += loss * chunk.len() as f64;
            global_step += 1;
        }
        let pred_variance = match collapse_diagnostic(&state, &probe) {
            Ok(v) => v,
            Err(e) => return Err(diverged(out, e, epoch + 1, global_step, lr)),
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
            pred_variance,
        };
        on_epoch(&rec);
        log.push(rec)?;
        if let Some(dir) = out {
            log.write_csv(&dir.join("runlog.csv"))?;
            let meta = CheckpointMeta {
                global_step,
                rng_state: RngState {
                    seed: cfg.seed,
                    epoch: epoch + 1,
                    step: global_step,
                },
            };
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
                state.save(&dir.join(format!("checkpoint_epoch_{:03}", epoch + 1)), meta)?;
            }
            if epoch + 1 == cfg.epochs {
                state.save(&dir.join("checkpoint"), meta)?;
            }
        }
    }
    Ok(PretrainOutcome {
        state,
        log,
        global_step,
    })
}

fn train_step(
    state: &mut ModelState<f32>,
    grads: &mut Grads<f32>,
    opt: &mut AdamW,
    samples: &[PreparedSample],
    lr: f64,
) -> Result<f64> {
    let (batch, targets, weights) = stack(samples)?;
    let (pred, cache) = state.forward(&batch, false)?;
    let (loss, dpred) = weighted_mse(pred.view(), targets.view(), &weights)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss is {loss}")));
    }
    grads.fill_zero();
    state.backward(&cache, Some(dpred.view()), None, grads)?;
    if !grads.all_finite() {
        return Err(Error::Divergence("non-finite gradients".into()));
    }
    opt.begin_step();
    for (slot, (t, g)) in state.tensors_mut().iter_mut().zip(&grads.data).enumerate() {
        let decay = t.kind.decays();
        opt.update(slot, &mut t.data, g, lr, decay);
    }
    if !state.all_finite() {
        return Err(Error::Divergence("non-finite parameters after update".into()));
    }
    Ok(loss)
}

fn diverged(out: Option<&Path>, err: Error, epoch: usize, global_step: u64, lr: f64) -> Error {
    if !err.is_divergence() {
        return err;
    }
    if let Some(dir) = out {
        let reason = err.to_string();
        let rec = DivergenceRecord {
            epoch,
            global_step,
            lr,
            reason: &reason,
        };
        if let Ok(text) = serde_json::to_string_pretty(&rec) {
            let _ = std::fs::write(dir.join("divergence.json"), text);
        }
    }
    err
}
