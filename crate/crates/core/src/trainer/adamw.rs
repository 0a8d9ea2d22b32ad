use crate::model::Scalar;

/// AdamW with decoupled weight decay. Moment buffers are keyed by slot so the
/// same optimiser can drive model tensors and probe heads.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the bias-correction counter; call once per optimisation step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter slot in place:
    /// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`, with the decay
    /// term only when `decay` is set.
    pub fn update<T: Scalar>(&mut self, slot: usize, params: &mut [T], grads: &[T], lr: f64, decay: bool) {
        if self.m.len() <= slot {
            self.m.resize(slot + 1, Vec::new());
            self.v.resize(slot + 1, Vec::new());
        }
        if self.m[slot].len() != params.len() {
            self.m[slot] = vec![0.0; params.len()];
            self.v[slot] = vec![0.0; params.len()];
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let wd = if decay { self.weight_decay } else { 0.0 };
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i].to_f64().unwrap_or(f64::NAN);
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            let theta = params[i].to_f64().unwrap_or(f64::NAN);
            let next = theta - lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * theta);
            params[i] = T::from_f64(next).unwrap_or_else(T::nan);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_on_quadratic_matches_hand_computation() {
        // loss = 0.5 * a * theta^2, gradient a * theta
        let (a, theta0, lr, wd) = (3.0f64, 2.0f64, 0.1, 0.05);
        let g = a * theta0;
        let (b1, b2, eps) = (0.9, 0.95, 1e-8);
        let m_hat = ((1.0 - b1) * g) / (1.0 - b1);
        let v_hat = ((1.0 - b2) * g * g) / (1.0 - b2);
        let adam_only = theta0 - lr * m_hat / (v_hat.sqrt() + eps);
        let expected = adam_only - lr * wd * theta0;

        let mut opt = AdamW::new(b1, b2, wd);
        opt.begin_step();
        let mut p = [theta0];
        opt.update(0, &mut p, &[g], lr, true);
        assert!((p[0] - expected).abs() < 1e-10);

        let mut opt = AdamW::new(b1, b2, wd);
        opt.begin_step();
        let mut q = [theta0];
        opt.update(0, &mut q, &[g], lr, false);
        assert!((q[0] - adam_only).abs() < 1e-10);
        assert!((p[0] - (q[0] - lr * wd * theta0)).abs() < 1e-10);
    }

    #[test]
    fn second_step_uses_bias_correction() {
        let mut opt = AdamW::new(0.9, 0.999, 0.0);
        let mut p = [1.0f64];
        for g in [0.5, -0.25] {
            opt.begin_step();
            opt.update(0, &mut p, &[g], 0.01, false);
        }
        let m = 0.9 * (0.1 * 0.5) + 0.1 * -0.25;
        let v = 0.999 * (0.001 * 0.25) + 0.001 * 0.0625;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let first = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        let expected = first - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
    }
}
