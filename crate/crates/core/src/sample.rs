//! Deterministic `m`-step reverse sampler that starts from the equalized
//! observation `y_r` and returns an estimate of `x_0 = W_s x`.

use ndarray::{Array2, ArrayView2};

use crate::equalizer::EqualizedObservation;
use crate::error::{Error, Result};
use crate::nn::Denoiser;
use crate::schedule::DiffusionSchedule;

/// Anything that predicts the driving noise of a forward-diffused state.
pub trait NoisePredictor {
    /// One row of `ε̂` per row of `x_t`; every row shares timestep `t`.
    fn predict_batch(&self, x_t: ArrayView2<f64>, h_r: ArrayView2<f64>, t: usize)
        -> Result<Array2<f64>>;
}

impl NoisePredictor for Denoiser {
    fn predict_batch(
        &self,
        x_t: ArrayView2<f64>,
        h_r: ArrayView2<f64>,
        t: usize,
    ) -> Result<Array2<f64>> {
        let steps = vec![t; x_t.nrows()];
        Denoiser::predict_batch(self, x_t, h_r, &steps)
    }
}

/// `x̂_0 = (x_t − √(1−ᾱ_t)·w_n ⊙ ε̂)/√ᾱ_t`
pub fn estimate_x0(
    x_t: &[f64],
    eps_hat: &[f64],
    w_n_diag: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    check_t(t, 1, schedule)?;
    check_lengths(x_t, eps_hat, w_n_diag)?;
    let ab = schedule.alpha_bar(t);
    let (a, g) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(w_n_diag)
        .map(|((x, e), w)| (x - g * w * e) / a)
        .collect())
}

/// `x_{t−1} = √ᾱ_{t−1}·x̂_0 + √(1−ᾱ_{t−1})·w_n ⊙ ε̂`, no fresh noise.
pub fn sample_step(
    x_t: &[f64],
    eps_hat: &[f64],
    w_n_diag: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    check_t(t, 2, schedule)?;
    let x0 = estimate_x0(x_t, eps_hat, w_n_diag, t, schedule)?;
    let ab_prev = schedule.alpha_bar(t - 1);
    let (a, g) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(x0
        .iter()
        .zip(eps_hat)
        .zip(w_n_diag)
        .map(|((x, e), w)| a * x + g * w * e)
        .collect())
}

fn check_t(t: usize, min: usize, schedule: &DiffusionSchedule) -> Result<()> {
    if t < min || t > schedule.steps() {
        return Err(Error::Parameter(format!(
            "timestep {t} outside [{min}, {}]",
            schedule.steps()
        )));
    }
    Ok(())
}

fn check_lengths(a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::Dimension(format!(
            "vector lengths {}, {}, {}",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    Ok(())
}

/// Run the sampler on a batch of states. Rows of `x_m`, `h_r` and `w_n` are
/// blocks. Makes exactly `m` predictor calls.
pub fn sample_batch<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x_m: Array2<f64>,
    h_r: ArrayView2<f64>,
    w_n: ArrayView2<f64>,
    m: usize,
    schedule: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    if m < 1 || m > schedule.t_max() {
        return Err(Error::Parameter(format!(
            "sampling start m = {m} outside [1, {}]",
            schedule.t_max()
        )));
    }
    if x_m.dim() != h_r.dim() || x_m.dim() != w_n.dim() {
        return Err(Error::Dimension(format!(
            "state {:?}, h_r {:?}, w_n {:?}",
            x_m.dim(),
            h_r.dim(),
            w_n.dim()
        )));
    }
    let mut x = x_m;
    for t in (1..=m).rev() {
        let eps = predictor.predict_batch(x.view(), h_r, t)?;
        if eps.dim() != x.dim() {
            return Err(Error::Dimension("predictor output shape".into()));
        }
        let ab = schedule.alpha_bar(t);
        let (a, g) = (ab.sqrt(), (1.0 - ab).sqrt());
        // t = 1 returns x̂_0 itself.
        let (a_prev, g_prev) = if t == 1 {
            (1.0, 0.0)
        } else {
            let abp = schedule.alpha_bar(t - 1);
            (abp.sqrt(), (1.0 - abp).sqrt())
        };
        ndarray::Zip::from(&mut x)
            .and(&eps)
            .and(&w_n)
            .for_each(|xv, &e, &w| {
                let z = w * e;
                let x0 = (*xv - g * z) / a;
                *xv = a_prev * x0 + g_prev * z;
            });
    }
    Ok(x)
}

/// Denoise one equalized observation with `m` reverse steps.
pub fn sample<P: NoisePredictor + ?Sized>(
    obs: &EqualizedObservation,
    predictor: &P,
    m: usize,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let n = obs.y_r.len();
    let row = |v: &[f64]| Array2::from_shape_vec((1, n), v.to_vec()).expect("row");
    let out = sample_batch(
        predictor,
        row(&obs.y_r),
        row(&obs.channel.h_r).view(),
        row(&obs.channel.w_n_diag).view(),
        m,
        schedule,
    )?;
    Ok(out.into_raw_vec_and_offset().0)
}
