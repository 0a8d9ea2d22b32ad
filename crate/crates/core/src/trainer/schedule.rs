use std::f64::consts::PI;

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then half-cosine decay
/// towards 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak_lr: f64) -> f64 {
    if step < warmup_steps {
        return peak_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = (step - warmup_steps) as f64 / span as f64;
    peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Constant warmup at `warmup_lr`, then cosine decay from `peak_lr`.
pub fn probe_lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak_lr: f64, warmup_lr: f64) -> f64 {
    if step < warmup_steps {
        warmup_lr
    } else {
        lr_at(step, total_steps, warmup_steps, peak_lr)
    }
}
