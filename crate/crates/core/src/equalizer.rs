//! Per-symbol MMSE equalization, the normalization-reshape to `y_r`, and the
//! closed-form conditional moments of `y_r` given `(x, h)`.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{self, ChannelRealization, ComplexSymbolBlock, Fading};
use crate::error::{Error, Result};

/// Equalized, normalized real observation together with the channel state the
/// receiver used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedObservation {
    pub y_r: Vec<f64>,
    pub channel: ChannelRealization,
}

impl EqualizedObservation {
    pub fn sigma(&self) -> f64 {
        self.channel.sigma
    }
}

/// Diagonals of `W_s = H_r²(H_r² + 2σ²I)⁻¹` and `W_n = H_r(H_r² + 2σ²I)⁻¹`,
/// each of length `2k`.
pub fn mmse_weights(h: &[Complex64], sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "MMSE weights need sigma > 0, got {sigma}"
        )));
    }
    let k = h.len();
    let noise = 2.0 * sigma * sigma;
    let mut w_s = vec![0.0; 2 * k];
    let mut w_n = vec![0.0; 2 * k];
    for (i, g) in h.iter().enumerate() {
        let mag = g.norm();
        let denom = mag * mag + noise;
        w_s[i] = mag * mag / denom;
        w_n[i] = mag / denom;
        w_s[i + k] = w_s[i];
        w_n[i + k] = w_n[i];
    }
    Ok((w_s, w_n))
}

/// AWGN convention: `W_s = W_n = I`.
pub fn awgn_weights(k: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![1.0; 2 * k], vec![1.0; 2 * k])
}

/// `y_eq,i = h_i^H y_c,i / (|h_i|² + 2σ²)`. Under the AWGN marker the received
/// block passes through unchanged.
pub fn equalize_mmse(
    yc: &ComplexSymbolBlock,
    fading: &Fading,
    sigma: f64,
) -> Result<ComplexSymbolBlock> {
    match fading {
        Fading::Awgn => Ok(yc.clone()),
        Fading::Rayleigh(h) => {
            if h.len() != yc.k() {
                return Err(Error::Dimension(format!(
                    "{} gains for {} received symbols",
                    h.len(),
                    yc.k()
                )));
            }
            let noise = 2.0 * sigma * sigma;
            let out = yc
                .symbols()
                .iter()
                .zip(h)
                .map(|(&y, &g)| {
                    let denom = g.norm_sqr() + noise;
                    if denom == 0.0 {
                        Err(Error::Degenerate(
                            "zero gain with zero noise cannot be equalized".into(),
                        ))
                    } else {
                        Ok(g.conj() * y / denom)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ComplexSymbolBlock::from_symbols(out))
        }
    }
}

/// Real reshape scaled by `1/√(1+σ²)`.
pub fn normalize_reshape(y_eq: &ComplexSymbolBlock, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let scale = (1.0 + sigma * sigma).sqrt().recip();
    let mut y_r = channel::unpack_real(y_eq);
    y_r.iter_mut().for_each(|v| *v *= scale);
    Ok(y_r)
}

/// Equalize with the receiver's channel estimate and reshape into an
/// observation ready for the sampler.
pub fn receive(
    yc: &ComplexSymbolBlock,
    estimate: &Fading,
    sigma: f64,
) -> Result<EqualizedObservation> {
    let y_eq = equalize_mmse(yc, estimate, sigma)?;
    let y_r = normalize_reshape(&y_eq, sigma)?;
    let channel = ChannelRealization::new(estimate.clone(), yc.k(), sigma)?;
    Ok(EqualizedObservation { y_r, channel })
}

/// Per-coordinate mean `W_s x/√(1+σ²)` and variance `σ²/(1+σ²)·W_n²` of `y_r`
/// given `x` and the channel.
pub fn conditional_moments(
    x: &[f64],
    channel: &ChannelRealization,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != channel.w_s_diag.len() {
        return Err(Error::Dimension(format!(
            "signal length {} vs channel length {}",
            x.len(),
            channel.w_s_diag.len()
        )));
    }
    let s2 = channel.sigma * channel.sigma;
    let scale = (1.0 + s2).sqrt().recip();
    let var_scale = s2 / (1.0 + s2);
    let mean = x
        .iter()
        .zip(&channel.w_s_diag)
        .map(|(xi, ws)| ws * xi * scale)
        .collect();
    let var = channel
        .w_n_diag
        .iter()
        .map(|wn| var_scale * wn * wn)
        .collect();
    Ok((mean, var))
}

/// Transmit a real block, equalize with the true channel and return `y_r`.
pub fn simulate_observation<R: Rng + ?Sized>(
    x: &[f64],
    fading: &Fading,
    sigma: f64,
    rng: &mut R,
) -> Result<EqualizedObservation> {
    let xc = channel::pack_complex(x)?;
    let yc = channel::transmit(&xc, fading, sigma, rng)?;
    receive(&yc, fading, sigma)
}
