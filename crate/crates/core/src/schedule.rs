//! Linear-α noise schedule, channel-colored forward diffusion, sampler step
//! coefficients, and the choice of the reverse start step `m`.
//!
//! Timesteps are 1-based throughout (`t ∈ {1, …, T}`), matching the
//! algorithms they implement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_ALPHA_FIRST: f64 = 0.9999;
pub const DEFAULT_ALPHA_LAST: f64 = 0.9800;
pub const DEFAULT_T_MAX: usize = 93;

/// Serializable description of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub alpha_first: f64,
    pub alpha_last: f64,
    pub t_max: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            alpha_first: DEFAULT_ALPHA_FIRST,
            alpha_last: DEFAULT_ALPHA_LAST,
            t_max: DEFAULT_T_MAX,
        }
    }
}

/// How the target ratio `(1−ᾱ_m)/ᾱ_m` is derived from σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MSelection {
    /// Target `σ²`: the forward marginal at `m` equals the equalized channel
    /// output distribution.
    #[default]
    KlZero,
    /// Target `2σ²`, the factor printed in the step-selection rule.
    LiteralEq20,
}

impl fmt::Display for MSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MSelection::KlZero => "kl-zero",
            MSelection::LiteralEq20 => "literal-eq20",
        })
    }
}

impl FromStr for MSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl-zero" => Ok(MSelection::KlZero),
            "literal-eq20" => Ok(MSelection::LiteralEq20),
            other => Err(Error::Parameter(format!(
                "unknown m-selection mode `{other}` (expected kl-zero or literal-eq20)"
            ))),
        }
    }
}

/// `β_t = √(1−ᾱ_t)/√α_t`, `γ_t = √(1−ᾱ_t)`, and `γ_{t−1}` (zero at `t = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub beta: f64,
    pub gamma: f64,
    pub gamma_prev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    params: ScheduleParams,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// `α_t = α_1 + (t−1)/(T−1)·(α_T − α_1)` and `ᾱ_t = Π_{i≤t} α_i`.
    pub fn build(steps: usize, alpha_first: f64, alpha_last: f64) -> Result<Self> {
        Self::from_params(ScheduleParams {
            steps,
            alpha_first,
            alpha_last,
            t_max: DEFAULT_T_MAX.min(steps),
        })
    }

    pub fn from_params(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            steps,
            alpha_first,
            alpha_last,
            t_max,
        } = params;
        if steps < 2 {
            return Err(Error::Parameter(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(0.0 < alpha_last && alpha_last <= alpha_first && alpha_first < 1.0) {
            return Err(Error::Parameter(format!(
                "alpha endpoints must satisfy 0 < last <= first < 1, got first={alpha_first}, last={alpha_last}"
            )));
        }
        if t_max < 1 || t_max > steps {
            return Err(Error::Parameter(format!(
                "t_max must lie in [1, {steps}], got {t_max}"
            )));
        }
        let span = (steps - 1) as f64;
        let alpha: Vec<f64> = (0..steps)
            .map(|i| alpha_first + (i as f64) / span * (alpha_last - alpha_first))
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            params,
            alpha,
            alpha_bar,
        })
    }

    pub fn with_t_max(mut self, t_max: usize) -> Result<Self> {
        if t_max < 1 || t_max > self.steps() {
            return Err(Error::Parameter(format!(
                "t_max must lie in [1, {}], got {t_max}",
                self.steps()
            )));
        }
        self.params.t_max = t_max;
        Ok(self)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn t_max(&self) -> usize {
        self.params.t_max
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::Parameter(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }

    /// `α_t` (1-based). Panics if `t` is out of range.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t` (1-based); `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Noise-to-signal ratio `(1−ᾱ_t)/ᾱ_t` reached by forward diffusion at `t`.
    pub fn ratio(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        (1.0 - ab) / ab
    }

    /// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·(w_n ⊙ ε)`.
    pub fn forward_diffuse(
        &self,
        x0: &[f64],
        t: usize,
        w_n_diag: &[f64],
        eps: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() || x0.len() != w_n_diag.len() {
            return Err(Error::Dimension(format!(
                "x0 {}, w_n {}, eps {}",
                x0.len(),
                w_n_diag.len(),
                eps.len()
            )));
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0
            .iter()
            .zip(w_n_diag)
            .zip(eps)
            .map(|((x, w), e)| a * x + b * w * e)
            .collect())
    }

    pub fn step_coefficients(&self, t: usize) -> Result<StepCoefficients> {
        self.check_t(t)?;
        let gamma = (1.0 - self.alpha_bar(t)).sqrt();
        Ok(StepCoefficients {
            beta: gamma / self.alpha(t).sqrt(),
            gamma,
            gamma_prev: (1.0 - self.alpha_bar(t - 1)).sqrt(),
        })
    }

    /// `min(t_max, argmin_m |target − (1−ᾱ_m)/ᾱ_m|)`, ties toward smaller `m`.
    pub fn select_m(&self, sigma: f64, mode: MSelection) -> Result<usize> {
        Ok(self.select_m_unclamped(sigma, mode)?.min(self.t_max()))
    }

    /// The argmin of [`select_m`](Self::select_m) before the `t_max` cap.
    pub fn select_m_unclamped(&self, sigma: f64, mode: MSelection) -> Result<usize> {
        if !(sigma >= 0.0) {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
        }
        let target = match mode {
            MSelection::KlZero => sigma * sigma,
            MSelection::LiteralEq20 => 2.0 * sigma * sigma,
        };
        // The ratio is strictly increasing in t, so the closest entry sits at
        // the insertion point or just before it.
        let idx = self
            .alpha_bar
            .partition_point(|&ab| (1.0 - ab) / ab < target);
        let best = if idx == 0 {
            0
        } else if idx == self.steps() {
            idx - 1
        } else {
            let below = target - self.ratio(idx);
            let above = self.ratio(idx + 1) - target;
            if below <= above {
                idx - 1
            } else {
                idx
            }
        };
        Ok(best + 1)
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::from_params(ScheduleParams::default()).expect("default schedule is valid")
    }
}
