//! Adam with a linear warm-up followed by cosine decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate: linear ramp to `base` over `warmup_steps`, then a half cosine
/// from `base` down to `min_lr` at `total_steps`; constant `min_lr` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn warmup_cosine(base: f64, warmup_steps: u64, total_steps: u64) -> Self {
        Self {
            base,
            warmup_steps,
            total_steps,
            min_lr: 0.0,
        }
    }

    /// Rate applied at optimizer step `step` (1-based).
    pub fn rate(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.base * step as f64 / self.warmup_steps as f64;
        }
        let decay_len = self.total_steps.saturating_sub(self.warmup_steps);
        if decay_len == 0 {
            return self.base;
        }
        if step >= self.total_steps {
            return self.min_lr;
        }
        let progress = (step - self.warmup_steps) as f64 / decay_len as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.min_lr + (self.base - self.min_lr) * cosine
    }
}

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    /// Apply one bias-corrected Adam update using the schedule's rate for the
    /// next step. Returns the rate used.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: &LrSchedule) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, optimizer sized for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at optimizer step {}",
                grads[i],
                self.step + 1
            )));
        }
        self.step += 1;
        let rate = lr.rate(self.step);
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine_shape() {
        let lr = LrSchedule::warmup_cosine(1e-4, 100, 1000);
        assert!(lr.rate(1) < lr.rate(100));
        assert!((lr.rate(100) - 1e-4).abs() < 1e-18);
        assert!((lr.rate(550) - 0.5e-4).abs() < 1e-12);
        assert!(lr.rate(999) < lr.rate(550));
        assert_eq!(lr.rate(1000), 0.0);
        assert_eq!(lr.rate(5000), 0.0);
    }

    #[test]
    fn no_decay_phase_keeps_base() {
        let lr = LrSchedule::warmup_cosine(0.01, 10, 10);
        assert_eq!(lr.rate(10), 0.01);
        assert_eq!(lr.rate(11), 0.01);
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.update(&mut p, &[0.0; 3], &LrSchedule::warmup_cosine(0.1, 0, 10))
            .unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0; 2];
        let err = adam
            .update(&mut p, &[0.0, f64::NAN], &LrSchedule::warmup_cosine(0.1, 0, 10))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (θ − 3)²
        let lr = LrSchedule::warmup_cosine(0.05, 100, 2000);
        let mut adam = Adam::new(1);
        let mut theta = vec![0.0];
        for _ in 0..2000 {
            let g = [2.0 * (theta[0] - 3.0)];
            adam.update(&mut theta, &g, &lr).unwrap();
        }
        let loss = (theta[0] - 3.0).powi(2);
        assert!(loss < 1e-3, "loss {loss}");
    }
}
