//! Finite-difference gradient checking on a tiny double-precision model.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sarjepa::model::{weighted_mse, window_loss_weights, Grads, ModelConfig, ModelState, TokenBatch};
use sarjepa::rng::rng_from_seed;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        patch_side: 2,
        embed_dim: 8,
        encoder_depth: 1,
        predictor_depth: 1,
        heads: 2,
        mlp_ratio: 2,
        target_dim: 6,
        window_side: 2,
        paper_faithful: false,
    }
}

/// Randomises every tensor so that biases, gains and position tables all carry signal.
pub fn perturbed_state(cfg: &ModelConfig, seed: u64) -> ModelState<f64> {
    let mut state = ModelState::<f64>::init(cfg, seed).unwrap();
    let mut rng = rng_from_seed(seed + 100);
    let normal = Normal::new(0.0, 0.4).unwrap();
    for t in state.tensors_mut() {
        for v in &mut t.data {
            *v += normal.sample(&mut rng);
        }
    }
    state
}

pub struct Problem {
    pub batch: TokenBatch<f64>,
    pub targets: Array2<f64>,
    pub weights: Vec<f64>,
}

pub fn problem(cfg: &ModelConfig, seed: u64, masked: Vec<bool>) -> Problem {
    let mut rng = rng_from_seed(seed);
    let side = cfg.window_side;
    let rows = masked.len();
    let patches = Array2::from_shape_fn((rows, cfg.patch_side.pow(2)), |_| rng.random_range(-1.0..1.0));
    let targets = Array2::from_shape_fn((rows, cfg.target_dim), |_| rng.random_range(-1.0..1.0));
    let n_tok = side * side;
    let n_win = rows / n_tok;
    let mut weights = Vec::new();
    for w in 0..n_win {
        let flags = &masked[w * n_tok..(w + 1) * n_tok];
        let pgca = !flags.iter().any(|m| *m);
        let ww = window_loss_weights(flags, cfg.target_dim, pgca).unwrap();
        weights.extend(ww.iter().map(|v| v / n_win as f64));
    }
    Problem {
        batch: TokenBatch::new(patches, masked, side).unwrap(),
        targets,
        weights,
    }
}

pub fn loss(state: &ModelState<f64>, p: &Problem) -> f64 {
    let (pred, _) = state.forward(&p.batch, false).unwrap();
    weighted_mse(pred.view(), p.targets.view(), &p.weights).unwrap().0
}

pub fn analytic(state: &ModelState<f64>, p: &Problem) -> Grads<f64> {
    let (pred, cache) = state.forward(&p.batch, false).unwrap();
    let (_, dpred) = weighted_mse(pred.view(), p.targets.view(), &p.weights).unwrap();
    let mut grads = Grads::zeros_like(state);
    state.backward(&cache, Some(dpred.view()), None, &mut grads).unwrap();
    grads
}

/// Relative error `|num - ana| / max(|num|, |ana|)` per tensor, using central
/// differences with step `h`.
pub fn group_errors(state: &mut ModelState<f64>, p: &Problem, h: f64) -> Vec<(String, f64)> {
    let grads = analytic(state, p);
    let mut out = Vec::new();
    for t in 0..state.tensors().len() {
        let name = state.tensors()[t].name.clone();
        let (mut num_sq, mut diff_sq, mut ana_sq) = (0.0, 0.0, 0.0);
        for i in 0..state.tensors()[t].data.len() {
            let orig = state.tensors()[t].data[i];
            state.tensors_mut()[t].data[i] = orig + h;
            let up = loss(state, p);
            state.tensors_mut()[t].data[i] = orig - h;
            let down = loss(state, p);
            state.tensors_mut()[t].data[i] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grads.data[t][i];
            num_sq += num * num;
            ana_sq += ana * ana;
            diff_sq += (num - ana) * (num - ana);
        }
        let denom = num_sq.sqrt().max(ana_sq.sqrt());
        let rel = if denom > 0.0 { diff_sq.sqrt() / denom } else { f64::INFINITY };
        out.push((name, rel));
    }
    out
}
