use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encode::{encode_dataset, image_tokens};
use super::split::FewShotSplit;
use crate::error::{Error, Result};
use crate::imagery::Dataset;
use crate::model::{Grads, ModelState, TokenBatch};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::trainer::{probe_lr_at, AdamW};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Linear,
    Finetune,
}

impl ProbeMode {
    pub fn name(self) -> &'static str {
        match self {
            ProbeMode::Linear => "linear",
            ProbeMode::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeMode::Linear),
            "finetune" => Ok(ProbeMode::Finetune),
            _ => Err(Error::config(format!("unknown probe mode '{s}' (expected linear or finetune)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    /// 0 skips training and scores the initial classifier.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    /// Std of the classifier weight init; 0 gives zero weights.
    pub head_init_std: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            mode: ProbeMode::Linear,
            lr: 1e-3,
            weight_decay: 5e-4,
            betas: (0.9, 0.999),
            batch_size: 50,
            epochs: 40,
            warmup_epochs: 2,
            warmup_lr: 1e-5,
            head_init_std: 0.01,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs ({}) must be smaller than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.warmup_lr >= 0.0 && self.warmup_lr.is_finite()) {
            return Err(Error::config("lr and warmup_lr must be finite, lr positive"));
        }
        if !(self.weight_decay >= 0.0) || !(self.head_init_std >= 0.0) {
            return Err(Error::config("weight_decay and head_init_std must be non-negative"));
        }
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(self.betas.0) || !ok(self.betas.1) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Feature standardisation without affine parameters, then a linear layer.
struct Head {
    w: Array2<f64>,
    b: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

struct NormOut {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

impl Head {
    fn new(dim: usize, classes: usize, std: f64, seed: u64) -> Result<Self> {
        let w = if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
            let mut rng = rng_from_seed(seed);
            Array2::from_shape_simple_fn((dim, classes), || normal.sample(&mut rng))
        } else {
            Array2::zeros((dim, classes))
        };
        Ok(Self {
            w,
            b: vec![0.0; classes],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        })
    }

    /// Batch statistics; updates the running estimates.
    fn norm_train(&mut self, x: ArrayView2<f64>) -> NormOut {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let mut xhat = x.to_owned();
        let mut rstd = Vec::with_capacity(x.ncols());
        for (k, mut col) in xhat.columns_mut().into_iter().enumerate() {
            let var = col.iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + BN_EPS).sqrt();
            col.mapv_inplace(|v| (v - mean[k]) * r);
            rstd.push(r);
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            self.running_mean[k] = (1.0 - BN_MOMENTUM) * self.running_mean[k] + BN_MOMENTUM * mean[k];
            self.running_var[k] = (1.0 - BN_MOMENTUM) * self.running_var[k] + BN_MOMENTUM * unbiased;
        }
        NormOut { xhat, rstd }
    }

    fn norm_eval(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (k, mut col) in z.columns_mut().into_iter().enumerate() {
            let r = 1.0 / (self.running_var[k] + BN_EPS).sqrt();
            let m = self.running_mean[k];
            col.mapv_inplace(|v| (v - m) * r);
        }
        z
    }

    fn logits(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut y = z.dot(&self.w);
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        let y = self.logits(self.norm_eval(x).view());
        y.rows().into_iter().map(|r| argmax(&r.to_vec())).collect()
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    (loss / n, grad)
}

/// Gradient through the affine-free standardisation in training mode.
fn norm_backward(out: &NormOut, dz: &Array2<f64>) -> Array2<f64> {
    let n = dz.nrows() as f64;
    let mut dx = dz.clone();
    for (k, mut col) in dx.columns_mut().into_iter().enumerate() {
        let h = out.xhat.column(k);
        let sum_d: f64 = col.sum();
        let sum_dh: f64 = col.iter().zip(h.iter()).map(|(d, h)| d * h).sum();
        let r = out.rstd[k];
        for (v, hv) in col.iter_mut().zip(h.iter()) {
            *v = r * (*v - sum_d / n - hv * sum_dh / n);
        }
    }
    dx
}

fn schedule(cfg: &ProbeConfig, n_train: usize) -> (usize, usize, usize) {
    let spe = n_train.div_ceil(cfg.batch_size);
    (spe, cfg.epochs * spe, cfg.warmup_epochs * spe)
}

fn check_split(split: &FewShotSplit, n: usize) -> Result<()> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::config("split needs train and test items"));
    }
    if split.train.iter().chain(&split.test).any(|&i| i >= n) {
        return Err(Error::config("split index out of range"));
    }
    Ok(())
}

fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    let hits = idx.iter().zip(pred).filter(|(&i, &p)| labels[i] == p).count();
    hits as f64 / idx.len() as f64
}

fn gather(features: ArrayView2<f32>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), features.ncols()), |(r, k)| features[[idx[r], k]] as f64)
}

/// Trains the standardisation + linear head on fixed features and returns
/// top-1 accuracy on the split's test items.
pub fn probe_features(
    features: ArrayView2<f32>,
    labels: &[usize],
    n_classes: usize,
    split: &FewShotSplit,
    cfg: &ProbeConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_split(split, features.nrows())?;
    let mut head = Head::new(
        features.ncols(),
        n_classes,
        cfg.head_init_std,
        derive_seed(split.seed, &[stream::PROBE]),
    )?;
    let mut opt = AdamW::new(cfg.betas.0, cfg.betas.1, cfg.weight_decay);
    let (_, total, warm) = schedule(cfg, split.train.len());
    let mut order = split.train.clone();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(split.seed, &[stream::SHUFFLE, epoch as u64])));
        for chunk in order.chunks(cfg.batch_size) {
            let lr = probe_lr_at(step, total, warm, cfg.lr, cfg.warmup_lr);
            let x = gather(features, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let normed = head.norm_train(x.view());
            let (loss, dlogits) = cross_entropy(&head.logits(normed.xhat.view()), &y);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("probe loss is {loss}")));
            }
            let dw = normed.xhat.t().dot(&dlogits);
            let db = dlogits.sum_axis(Axis(0));
            opt.begin_step();
            opt.update(0, head.w.as_slice_mut().expect("contiguous"), dw.as_slice().expect("contiguous"), lr, true);
            opt.update(1, &mut head.b, db.as_slice().expect("contiguous"), lr, false);
            step += 1;
        }
    }
    let pred = head.predict(gather(features, &split.test).view());
    Ok(accuracy(&pred, labels, &split.test))
}

fn finetune(state: &ModelState<f32>, ds: &Dataset, split: &FewShotSplit, cfg: &ProbeConfig) -> Result<f64> {
    let mut state = state.clone();
    let p = state.config().patch_side;
    let tokens = split
        .train
        .iter()
        .map(|&i| image_tokens(&ds.images[i], p))
        .collect::<Result<Vec<_>>>()?;
    let side = tokens[0].1;
    let n_tok = side * side;
    let mut head = Head::new(
        state.config().embed_dim,
        ds.n_classes(),
        cfg.head_init_std,
        derive_seed(split.seed, &[stream::PROBE]),
    )?;
    let mut opt = AdamW::new(cfg.betas.0, cfg.betas.1, cfg.weight_decay);
    let mut grads = Grads::zeros_like(&state);
    let head_slot = state.tensors().len();
    let (_, total, warm) = schedule(cfg, split.train.len());
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(split.seed, &[stream::SHUFFLE, epoch as u64])));
        for chunk in order.chunks(cfg.batch_size) {
            let lr = probe_lr_at(step, total, warm, cfg.lr, cfg.warmup_lr);
            let views: Vec<_> = chunk.iter().map(|&k| tokens[k].0.view()).collect();
            let patches = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
            let rows = patches.nrows();
            let (encoded, cache) = state.forward(&TokenBatch::new(patches, vec![false; rows], side)?, true)?;
            let pooled = state.pool(&encoded, n_tok).mapv(|v| v as f64);
            let y: Vec<usize> = chunk.iter().map(|&k| ds.labels[split.train[k]]).collect();
            let normed = head.norm_train(pooled.view());
            let (loss, dlogits) = cross_entropy(&head.logits(normed.xhat.view()), &y);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("fine-tuning loss is {loss}")));
            }
            let dw = normed.xhat.t().dot(&dlogits);
            let db = dlogits.sum_axis(Axis(0));
            let dpool = norm_backward(&normed, &dlogits.dot(&head.w.t()));
            let inv = 1.0 / n_tok as f64;
            let d_enc = Array2::from_shape_fn((rows, dpool.ncols()), |(r, k)| (dpool[[r / n_tok, k]] * inv) as f32);
            grads.fill_zero();
            state.backward(&cache, None, Some(d_enc.view()), &mut grads)?;
            opt.begin_step();
            for id in 0..head_slot {
                if !state.is_encoder_tensor(id) {
                    continue;
                }
                let t = &mut state.tensors_mut()[id];
                let decay = t.kind.decays();
                opt.update(id, &mut t.data, &grads.data[id], lr, decay);
            }
            opt.update(head_slot, head.w.as_slice_mut().expect("contiguous"), dw.as_slice().expect("contiguous"), lr, true);
            opt.update(head_slot + 1, &mut head.b, db.as_slice().expect("contiguous"), lr, false);
            if !state.all_finite() {
                return Err(Error::Divergence("non-finite encoder weights during fine-tuning".into()));
            }
            step += 1;
        }
    }
    let test: Vec<_> = split.test.iter().map(|&i| ds.images[i].clone()).collect();
    let feats = encode_dataset(&state, &test)?.mapv(|v| v as f64);
    let pred = head.predict(feats.view());
    Ok(accuracy(&pred, &ds.labels, &split.test))
}

/// Top-1 test accuracy of a linear probe on frozen features, or of the whole
/// network after fine-tuning, depending on `cfg.mode`.
pub fn probe(state: &ModelState<f32>, ds: &Dataset, split: &FewShotSplit, cfg: &ProbeConfig) -> Result<f64> {
    cfg.validate()?;
    check_split(split, ds.len())?;
    match cfg.mode {
        ProbeMode::Linear => {
            let feats = encode_dataset(state, &ds.images)?;
            probe_features(feats.view(), &ds.labels, ds.n_classes(), split, cfg)
        }
        ProbeMode::Finetune => finetune(state, ds, split, cfg),
    }
}
