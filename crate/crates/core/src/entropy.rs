//! Monte Carlo check of the entropy-reduction condition for one reverse step.
//!
//! With `β_t = √(1−ᾱ_t)/√α_t` and `γ_t = √(1−ᾱ_t)`, the Gaussian upper bound
//! on the conditional entropy of coordinate `i` after a step from `t` is
//!
//! ```text
//! u_τ(t) = ½·ln(W²_n,i·((γ²_{t−1} − β_tγ_{t−1})·E[ε_θ²] + β_tγ_{t−1} + (β_t² − β_tγ_{t−1})·τ)) + C
//! ```
//!
//! and it does not exceed `H(x_t,i | x_0, h) = ½·ln(W²_n,i·(1−ᾱ_t)) + C` exactly
//! when `E[ε_θ²] ≥ f_τ(t)`. `C = ½·ln(2πe)`.

use std::io::Write;
use std::ops::RangeInclusive;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMode, ChannelRealization, Fading};
use crate::error::{Error, Result};
use crate::rng::fill_normal;
use crate::sample::NoisePredictor;
use crate::schedule::DiffusionSchedule;
use crate::source::Source;

/// Differential entropy offset of a Gaussian: `½·ln(2πe)`.
pub fn entropy_constant() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

/// Quantile of the element-wise squared error used as `τ̂`.
pub const DEFAULT_TAU_PERCENTILE: f64 = 0.95;
/// Margin slope below this fraction of its initial value counts as flat.
pub const FLAT_SLOPE_FRACTION: f64 = 0.01;
/// Admissible range for a recommended `t_max`.
pub const TMAX_RANGE: RangeInclusive<usize> = 10..=150;

/// `γ²_{t−1} − β_tγ_{t−1}`, `β_tγ_{t−1}`, `β_t² − β_tγ_{t−1}` at step `t ≥ 2`.
fn bound_terms(t: usize, schedule: &DiffusionSchedule) -> Result<(f64, f64, f64)> {
    if t < 2 {
        return Err(Error::Domain(format!(
            "entropy bound needs t >= 2 (γ_{{t-1}} = 0 at t = {t})"
        )));
    }
    let c = schedule.step_coefficients(t)?;
    let cross = c.beta * c.gamma_prev;
    Ok((c.gamma_prev * c.gamma_prev - cross, cross, c.beta * c.beta - cross))
}

/// Threshold on `E[ε_θ²]` above which the bound does not increase entropy.
pub fn f_tau(t: usize, tau: f64, schedule: &DiffusionSchedule) -> Result<f64> {
    let (denom, cross, slope_num) = bound_terms(t, schedule)?;
    if denom == 0.0 {
        return Err(Error::Domain(format!("γ²_{{t-1}} = β_tγ_{{t-1}} at t = {t}")));
    }
    let gamma2 = 1.0 - schedule.alpha_bar(t);
    Ok((gamma2 - cross) / denom - slope_num / denom * tau)
}

/// Slope of [`f_tau`] in `τ`: `−(β_t² − β_tγ_{t−1})/(γ²_{t−1} − β_tγ_{t−1})`.
pub fn f_tau_slope(t: usize, schedule: &DiffusionSchedule) -> Result<f64> {
    let (denom, _, slope_num) = bound_terms(t, schedule)?;
    Ok(-slope_num / denom)
}

/// Upper bound `u_τ(t)` on the entropy of coordinate `i` after one step.
pub fn u_tau(
    t: usize,
    tau: f64,
    mean_eps_sq: f64,
    w_n_i: f64,
    schedule: &DiffusionSchedule,
) -> Result<f64> {
    let (denom, cross, slope_num) = bound_terms(t, schedule)?;
    let variance = w_n_i * w_n_i * (denom * mean_eps_sq + cross + slope_num * tau);
    if !(variance > 0.0) {
        return Err(Error::Domain(format!(
            "entropy bound variance {variance} is not positive at t = {t} \
             (E[eps^2] = {mean_eps_sq}, tau = {tau}); the bounded-loss assumption is violated"
        )));
    }
    Ok(0.5 * variance.ln() + entropy_constant())
}

/// `H(x_t,i | x_0, h) = ½·ln(W²_n,i·(1−ᾱ_t)) + C`.
pub fn conditional_entropy_step(t: usize, w_n_i: f64, schedule: &DiffusionSchedule) -> Result<f64> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::Parameter(format!("timestep {t} out of range")));
    }
    if !(w_n_i > 0.0) {
        return Err(Error::Domain(format!(
            "noise weight {w_n_i} makes coordinate entropy undefined"
        )));
    }
    Ok(0.5 * (w_n_i * w_n_i * (1.0 - schedule.alpha_bar(t))).ln() + entropy_constant())
}

/// Monte Carlo moments of the predictor output at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMoments {
    pub t: usize,
    pub samples: usize,
    /// `E[ε_θ]` averaged over draws and coordinates.
    pub mean_eps: f64,
    /// `E[ε_θ,i]` for each coordinate `i`.
    pub coord_mean: Vec<f64>,
    /// Largest `|E[ε_θ,i]|` over coordinates `i`.
    pub max_abs_coord_mean: f64,
    /// `E[ε_θ²]` averaged over draws and coordinates.
    pub mean_eps_sq: f64,
    pub std_err_eps_sq: f64,
    /// Element-wise mean squared error `E[(ε_i − ε_θ,i)²]`.
    pub mean_sq_error: f64,
    /// Upper quantile of the element-wise squared error.
    pub tau_hat: f64,
}

/// Estimate the moments of `ε_θ(x_t, h_r, t)` over `n` draws of source block,
/// channel state and driving noise. Channel weights follow the training
/// convention (noise level `σ_t² = (1−ᾱ_t)/ᾱ_t`).
#[allow(clippy::too_many_arguments)]
pub fn mc_moments<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    source: &mut Source,
    schedule: &DiffusionSchedule,
    mode: ChannelMode,
    t: usize,
    n: usize,
    percentile: f64,
    rng: &mut R,
) -> Result<StepMoments> {
    if n == 0 {
        return Err(Error::Parameter("need at least one Monte Carlo draw".into()));
    }
    if !(0.0..=1.0).contains(&percentile) {
        return Err(Error::Parameter(format!("percentile {percentile} outside [0, 1]")));
    }
    let k = source.k();
    let dim = 2 * k;
    let sigma_t = schedule.ratio(t).sqrt();
    let chunk = 1024.min(n);

    let mut coord_sum = vec![0.0; dim];
    let mut sum_sq = 0.0;
    let mut sum_sq_sq = 0.0;
    let mut sq_errors = Vec::with_capacity(n * dim);
    let mut done = 0;
    while done < n {
        let rows = chunk.min(n - done);
        let mut x_t = Array2::zeros((rows, dim));
        let mut h_r = Array2::zeros((rows, dim));
        let mut eps_all = Array2::zeros((rows, dim));
        let mut eps = vec![0.0; dim];
        for r in 0..rows {
            let x = source.next_block(rng)?;
            let channel = match Fading::draw(mode, k, rng) {
                Fading::Awgn => ChannelRealization::awgn(k, sigma_t),
                Fading::Rayleigh(h) => ChannelRealization::rayleigh(h, sigma_t)?,
            };
            fill_normal(rng, &mut eps);
            let x0: Vec<f64> = x.iter().zip(&channel.w_s_diag).map(|(a, w)| a * w).collect();
            let xt = schedule.forward_diffuse(&x0, t, &channel.w_n_diag, &eps)?;
            x_t.row_mut(r).assign(&ndarray::ArrayView1::from(&xt));
            h_r.row_mut(r).assign(&ndarray::ArrayView1::from(&channel.h_r));
            eps_all.row_mut(r).assign(&ndarray::ArrayView1::from(&eps));
        }
        let pred = predictor.predict_batch(x_t.view(), h_r.view(), t)?;
        for (prow, erow) in pred.rows().into_iter().zip(eps_all.rows()) {
            for (i, (&p, &e)) in prow.iter().zip(erow.iter()).enumerate() {
                coord_sum[i] += p;
                sum_sq += p * p;
                sum_sq_sq += p * p * p * p;
                sq_errors.push((e - p) * (e - p));
            }
        }
        done += rows;
    }

    let total = (n * dim) as f64;
    let mean_eps = coord_sum.iter().sum::<f64>() / total;
    let coord_mean: Vec<f64> = coord_sum.iter().map(|s| s / n as f64).collect();
    let max_abs_coord_mean = coord_mean.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mean_eps_sq = sum_sq / total;
    let var_sq = (sum_sq_sq / total - mean_eps_sq * mean_eps_sq).max(0.0);
    let mean_sq_error = sq_errors.iter().sum::<f64>() / total;
    let tau_hat = quantile(&mut sq_errors, percentile);
    Ok(StepMoments {
        t,
        samples: n,
        mean_eps,
        coord_mean,
        max_abs_coord_mean,
        mean_eps_sq,
        std_err_eps_sq: (var_sq / total).sqrt(),
        mean_sq_error,
        tau_hat,
    })
}

/// Nearest-rank quantile; reorders `values`.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1;
    let (_, v, _) = values.select_nth_unstable_by(rank, |a, b| a.total_cmp(b));
    *v
}

/// Which `τ` enters the sufficient condition `E[ε_θ²] ≥ f_τ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauChoice {
    Fixed(f64),
    /// Use each step's `τ̂`.
    Estimated(EstimatedTau),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatedTau {
    Estimated,
}

impl Default for TauChoice {
    fn default() -> Self {
        TauChoice::Estimated(EstimatedTau::Estimated)
    }
}

/// `τ` of the reported margin curve.
pub const DEFAULT_CURVE_TAU: f64 = 0.3;

impl TauChoice {
    fn resolve(&self, moments: &StepMoments) -> f64 {
        match self {
            TauChoice::Fixed(tau) => *tau,
            TauChoice::Estimated(_) => moments.tau_hat,
        }
    }
}

/// One row of the entropy report. `f_tau`, `u_tau` and `condition_holds` use
/// the condition's `τ`; `margin` is `H − u_τ` at the fixed curve `τ`. Entropies
/// are evaluated at `W_n,i = 1`; differences do not depend on `W_n,i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub t: usize,
    pub mean_eps: f64,
    pub mean_eps_sq: f64,
    pub tau_hat: f64,
    pub f_tau: f64,
    #[serde(rename = "H")]
    pub entropy: f64,
    pub u_tau: f64,
    pub margin: f64,
    pub tau: f64,
    pub curve_tau: f64,
    pub max_abs_mean_eps: f64,
    pub condition_holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub rows: Vec<ReportRow>,
    pub samples: usize,
    pub percentile: f64,
    pub tau: TauChoice,
    pub curve_tau: f64,
    pub channel: ChannelMode,
}

/// Settings for [`build_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSettings {
    pub steps: Vec<usize>,
    pub samples: usize,
    pub percentile: f64,
    pub tau: TauChoice,
    pub curve_tau: f64,
    pub channel: ChannelMode,
}

/// Evaluate every step on the same draws (common random numbers), so the
/// curve's shape reflects `t` rather than sampling noise. `make_rng` must
/// return a fresh stream positioned identically on each call.
pub fn build_report<P, R, F>(
    predictor: &P,
    source_factory: &mut dyn FnMut() -> Result<Source>,
    schedule: &DiffusionSchedule,
    settings: &ReportSettings,
    mut make_rng: F,
) -> Result<MonteCarloReport>
where
    P: NoisePredictor + ?Sized,
    R: Rng,
    F: FnMut() -> R,
{
    let mut rows = Vec::with_capacity(settings.steps.len());
    for &t in &settings.steps {
        let mut source = source_factory()?;
        let mut rng = make_rng();
        let m = mc_moments(
            predictor,
            &mut source,
            schedule,
            settings.channel,
            t,
            settings.samples,
            settings.percentile,
            &mut rng,
        )?;
        rows.push(report_row(&m, settings.tau.resolve(&m), settings.curve_tau, schedule)?);
    }
    Ok(MonteCarloReport {
        rows,
        samples: settings.samples,
        percentile: settings.percentile,
        tau: settings.tau,
        curve_tau: settings.curve_tau,
        channel: settings.channel,
    })
}

/// Combine measured moments with the closed-form bounds at step `t`.
pub fn report_row(
    m: &StepMoments,
    tau: f64,
    curve_tau: f64,
    schedule: &DiffusionSchedule,
) -> Result<ReportRow> {
    let f = f_tau(m.t, tau, schedule)?;
    let h = conditional_entropy_step(m.t, 1.0, schedule)?;
    let bound = |tau| match u_tau(m.t, tau, m.mean_eps_sq, 1.0, schedule) {
        Ok(u) => u,
        Err(e) => {
            log::warn!("{e}");
            f64::NAN
        }
    };
    let u = bound(tau);
    Ok(ReportRow {
        t: m.t,
        mean_eps: m.mean_eps,
        mean_eps_sq: m.mean_eps_sq,
        tau_hat: m.tau_hat,
        f_tau: f,
        entropy: h,
        u_tau: u,
        margin: h - bound(curve_tau),
        tau,
        curve_tau,
        max_abs_mean_eps: m.max_abs_coord_mean,
        condition_holds: m.mean_eps_sq >= f,
    })
}

/// Report as CSV. Column order:
/// `t,mean_eps,mean_eps_sq,tau_hat,f_tau,H,u_tau,margin,tau,curve_tau,max_abs_mean_eps,condition_holds`.
pub fn write_report_csv<W: Write>(out: W, report: &MonteCarloReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<entropy report>", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmaxRecommendation {
    pub t_max: usize,
    /// Set when the sufficient condition never held in the window.
    pub warning: Option<String>,
    /// First step at which the margin curve counts as flat, if any.
    pub flat_from: Option<usize>,
}

/// Largest `t` in `window` where `E[ε_θ²] ≥ f_τ(t)` holds and the margin curve
/// has not yet flattened (slope below 1% of its initial slope), clamped to
/// `[10, 150]`.
pub fn recommend_tmax(report: &MonteCarloReport, window: RangeInclusive<usize>) -> TmaxRecommendation {
    let clamp = |t: usize| t.clamp(*TMAX_RANGE.start(), *TMAX_RANGE.end());
    let mut rows: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| window.contains(&r.t))
        .collect();
    rows.sort_by_key(|r| r.t);

    let slopes: Vec<(usize, f64)> = rows
        .windows(2)
        .map(|w| (w[0].t, (w[1].margin - w[0].margin) / (w[1].t - w[0].t) as f64))
        .collect();
    let flat_from = slopes.first().and_then(|&(_, s0)| {
        slopes
            .iter()
            .find(|(_, s)| s.abs() < FLAT_SLOPE_FRACTION * s0.abs())
            .map(|&(t, _)| t)
    });

    let best = rows
        .iter()
        .filter(|r| r.condition_holds && flat_from.map_or(true, |f| r.t <= f))
        .map(|r| r.t)
        .max();
    match best {
        Some(t) => TmaxRecommendation {
            t_max: clamp(t),
            warning: None,
            flat_from,
        },
        None => {
            let warning = format!(
                "sufficient condition E[eps^2] >= f_tau(t) never holds in {}..={}; falling back to the window minimum",
                window.start(),
                window.end()
            );
            log::warn!("{warning}");
            TmaxRecommendation {
                t_max: clamp(*window.start()),
                warning: Some(warning),
                flat_from,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::source::SourceKind;
    use ndarray::ArrayView2;
    use std::cell::RefCell;

    /// `f_τ` recomputed straight from `ᾱ` without the step-coefficient cache.
    fn f_tau_from_alpha_bar(t: usize, tau: f64, ab: &[f64]) -> f64 {
        let abt = ab[t - 1];
        let abp = ab[t - 2];
        let alpha_t = abt / abp;
        let beta = ((1.0 - abt) / alpha_t).sqrt();
        let gp = (1.0 - abp).sqrt();
        let d = gp * gp - beta * gp;
        (1.0 - abt - beta * gp) / d - (beta * beta - beta * gp) / d * tau
    }

    fn u_tau_from_alpha_bar(t: usize, tau: f64, e2: f64, ab: &[f64]) -> f64 {
        let abt = ab[t - 1];
        let abp = ab[t - 2];
        let beta = ((1.0 - abt) * abp / abt).sqrt();
        let gp = (1.0 - abp).sqrt();
        let v = (gp * gp - beta * gp) * e2 + beta * gp + (beta * beta - beta * gp) * tau;
        0.5 * v.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5
    }

    #[test]
    fn zero_tau_drops_second_term() {
        let s = DiffusionSchedule::default();
        for t in [2, 10, 93, 500] {
            let c = s.step_coefficients(t).unwrap();
            let d = c.gamma_prev * c.gamma_prev - c.beta * c.gamma_prev;
            let expected = (1.0 - s.alpha_bar(t) - c.beta * c.gamma_prev) / d;
            assert!((f_tau(t, 0.0, &s).unwrap() - expected).abs() < 1e-12 * expected.abs());
        }
    }

    #[test]
    fn slope_matches_formula_and_is_positive() {
        let s = DiffusionSchedule::default();
        for t in 2..=s.steps() {
            let c = s.step_coefficients(t).unwrap();
            let num = c.beta * c.beta - c.beta * c.gamma_prev;
            let den = c.gamma_prev * c.gamma_prev - c.beta * c.gamma_prev;
            assert!(num > 0.0 && den < 0.0, "t={t}");
            let slope = f_tau_slope(t, &s).unwrap();
            assert!((slope - (-num / den)).abs() <= 1e-12 * slope.abs());
            assert!(slope > 0.0);
            let diff = f_tau(t, 1.0, &s).unwrap() - f_tau(t, 0.0, &s).unwrap();
            assert!((diff - slope).abs() < 1e-9 * slope.abs());
        }
    }

    #[test]
    fn dual_path_curves_agree() {
        let s = DiffusionSchedule::default();
        let ab: Vec<f64> = (1..=s.steps())
            .map(|t| s.alphas()[..t].iter().product())
            .collect();
        for t in 2..=s.steps() {
            let a = f_tau(t, 0.3, &s).unwrap();
            let b = f_tau_from_alpha_bar(t, 0.3, &ab);
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "t={t}: {a} vs {b}");
            let ua = u_tau(t, 0.3, 0.8, 1.0, &s).unwrap();
            let ub = u_tau_from_alpha_bar(t, 0.3, 0.8, &ab);
            assert!((ua - ub).abs() <= 1e-10, "t={t}");
        }
    }

    #[test]
    fn f_tau_rejects_first_step() {
        let s = DiffusionSchedule::default();
        assert!(matches!(f_tau(1, 0.3, &s), Err(Error::Domain(_))));
    }

    #[test]
    fn bound_equals_entropy_on_threshold() {
        let s = DiffusionSchedule::default();
        for t in [2, 20, 93, 400] {
            let f = f_tau(t, 0.3, &s).unwrap();
            let h = conditional_entropy_step(t, 0.7, &s).unwrap();
            let u = u_tau(t, 0.3, f, 0.7, &s).unwrap();
            assert!((u - h).abs() < 1e-9, "t={t}");
            // above the threshold the bound sits strictly below
            let u_above = u_tau(t, 0.3, f + 0.05, 0.7, &s).unwrap();
            assert!(u_above < h);
        }
    }

    #[test]
    fn u_tau_domain_error() {
        let s = DiffusionSchedule::default();
        // a huge second moment with τ = 0 drives the variance negative
        assert!(matches!(u_tau(50, 0.0, 1e6, 1.0, &s), Err(Error::Domain(_))));
    }

    #[test]
    fn entropy_step_properties() {
        let s = DiffusionSchedule::default();
        let h1 = conditional_entropy_step(10, 1.0, &s).unwrap();
        let h2 = conditional_entropy_step(20, 1.0, &s).unwrap();
        assert!(h1 < h2);
        let c = 3.5;
        let hc = conditional_entropy_step(10, c, &s).unwrap();
        assert!((hc - h1 - c.ln()).abs() < 1e-12);
        assert!(matches!(
            conditional_entropy_step(10, 0.0, &s),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn entropy_zero_point() {
        // ½ln(x) + ½ln(2πe) = 0 at x = 1/(2πe)
        let x = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        assert!((0.5 * x.ln() + entropy_constant()).abs() < 1e-15);
    }

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict_batch(&self, x: ArrayView2<f64>, _: ArrayView2<f64>, _: usize) -> Result<Array2<f64>> {
            Ok(Array2::zeros(x.dim()))
        }
    }

    /// Returns pre-recorded noise rows in order.
    struct Replay(RefCell<Vec<Array2<f64>>>);

    impl NoisePredictor for Replay {
        fn predict_batch(&self, x: ArrayView2<f64>, _: ArrayView2<f64>, _: usize) -> Result<Array2<f64>> {
            let mut all = self.0.borrow_mut();
            let full = all.pop().unwrap();
            let head = full.slice(ndarray::s![..x.nrows(), ..]).to_owned();
            let rest = full.slice(ndarray::s![x.nrows().., ..]).to_owned();
            all.push(rest);
            Ok(head)
        }
    }

    #[test]
    fn zero_predictor_moments() {
        let s = DiffusionSchedule::default();
        let mut src = Source::new(SourceKind::GaussianMixture, 4, None).unwrap();
        let m = mc_moments(&Zero, &mut src, &s, ChannelMode::Awgn, 10, 500, 0.95, &mut stream(1, 0))
            .unwrap();
        assert_eq!(m.mean_eps, 0.0);
        assert_eq!(m.mean_eps_sq, 0.0);
        // squared standard normal: 95th percentile ≈ 3.84
        assert!((m.tau_hat - 3.84).abs() < 0.3, "{}", m.tau_hat);
    }

    #[test]
    fn oracle_predictor_moments() {
        let s = DiffusionSchedule::default();
        let k = 4;
        let t = 30;
        let n = 4000;
        // replay the exact noise mc_moments is about to draw
        let mut rng = stream(2, 0);
        let mut src = Source::new(SourceKind::UnitSphere, k, None).unwrap();
        let mut eps_rows = Array2::zeros((n, 2 * k));
        let mut e = vec![0.0; 2 * k];
        for r in 0..n {
            src.next_block(&mut rng).unwrap();
            fill_normal(&mut rng, &mut e);
            eps_rows.row_mut(r).assign(&ndarray::ArrayView1::from(&e));
        }
        let replay = Replay(RefCell::new(vec![eps_rows]));
        let mut src = Source::new(SourceKind::UnitSphere, k, None).unwrap();
        let m = mc_moments(&replay, &mut src, &s, ChannelMode::Awgn, t, n, 0.95, &mut stream(2, 0))
            .unwrap();
        assert!((m.mean_eps_sq - 1.0).abs() < 4.0 * m.std_err_eps_sq.max(0.01));
        assert_eq!(m.tau_hat, 0.0);
        assert_eq!(m.mean_sq_error, 0.0);
    }

    fn synthetic_report(e2: impl Fn(usize) -> f64, tau: f64, steps: RangeInclusive<usize>) -> MonteCarloReport {
        let s = DiffusionSchedule::default().with_t_max(1000).unwrap();
        let rows = steps
            .map(|t| {
                let m = StepMoments {
                    t,
                    samples: 1,
                    mean_eps: 0.0,
                    coord_mean: Vec::new(),
                    max_abs_coord_mean: 0.0,
                    mean_eps_sq: e2(t),
                    std_err_eps_sq: 0.0,
                    mean_sq_error: 0.0,
                    tau_hat: tau,
                };
                report_row(&m, tau, tau, &s).unwrap()
            })
            .collect();
        MonteCarloReport {
            rows,
            samples: 1,
            percentile: 0.95,
            tau: TauChoice::Fixed(tau),
            curve_tau: tau,
            channel: ChannelMode::Awgn,
        }
    }

    #[test]
    fn oracle_recommendation_is_window_max() {
        // E[ε²] = 1 and τ = 0 satisfy the condition at every step.
        let report = synthetic_report(|_| 1.0, 0.0, 2..=200);
        assert!(report.rows.iter().all(|r| r.condition_holds));
        let rec = recommend_tmax(&report, 10..=60);
        assert_eq!(rec.t_max, 60);
        assert!(rec.warning.is_none());
    }

    #[test]
    fn zero_net_triggers_warning() {
        let report = synthetic_report(|_| 0.0, 1.0, 2..=200);
        assert!(report.rows.iter().all(|r| !r.condition_holds));
        let rec = recommend_tmax(&report, 10..=150);
        assert_eq!(rec.t_max, 10);
        assert!(rec.warning.is_some());
    }

    #[test]
    fn flat_region_caps_recommendation() {
        let report = synthetic_report(|_| 1.0, 0.0, 2..=1000);
        let rec = recommend_tmax(&report, 10..=1000);
        let flat = rec.flat_from.expect("oracle margin flattens");
        assert!(flat < 1000);
        assert_eq!(rec.t_max, flat.clamp(10, 150));
    }

    #[test]
    fn report_csv_header() {
        let report = synthetic_report(|_| 0.5, 0.3, 2..=4);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "t,mean_eps,mean_eps_sq,tau_hat,f_tau,H,u_tau,margin,tau,curve_tau,max_abs_mean_eps,condition_holds\n"
        ));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn tau_choice_parses_from_toml() {
        #[derive(Deserialize)]
        struct W {
            tau: TauChoice,
        }
        let w: W = toml::from_str("tau = 0.3").unwrap();
        assert_eq!(w.tau, TauChoice::Fixed(0.3));
        let w: W = toml::from_str("tau = \"estimated\"").unwrap();
        assert_eq!(w.tau, TauChoice::Estimated(EstimatedTau::Estimated));
    }
}
