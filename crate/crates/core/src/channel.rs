//! Complex baseband mapping, power normalization, and the AWGN / Rayleigh
//! block-fading channel.
//!
//! A real block `x ∈ R^{2k}` maps onto `k` complex channel uses as
//! `x_c[i] = x[i] + j·x[i+k]`. Complex noise is `CN(0, 2σ²)`, i.e. each real
//! dimension carries variance `σ²`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equalizer;
use crate::error::{Error, Result};
use crate::rng::normal;

/// Real-valued transmitted block of length `2k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSignalBlock {
    values: Vec<f64>,
}

impl RealSignalBlock {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "real block length must be a positive even number, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("entry {i} of real block")));
        }
        Ok(Self { values })
    }

    pub fn zeros(k: usize) -> Self {
        assert!(k >= 1, "k must be positive");
        Self {
            values: vec![0.0; 2 * k],
        }
    }

    /// Number of complex channel uses.
    pub fn k(&self) -> usize {
        self.values.len() / 2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for RealSignalBlock {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `k` complex channel symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSymbolBlock {
    symbols: Vec<Complex64>,
}

impl ComplexSymbolBlock {
    pub fn from_symbols(symbols: Vec<Complex64>) -> Self {
        Self { symbols }
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::Dimension(format!(
                "real part has {} entries, imaginary part {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self {
            symbols: re
                .iter()
                .zip(im)
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn re(&self) -> Vec<f64> {
        self.symbols.iter().map(|c| c.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.symbols.iter().map(|c| c.im).collect()
    }

    /// `Σ |x_c,i|²`.
    pub fn energy(&self) -> f64 {
        self.symbols.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Channel model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Awgn,
    Rayleigh,
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Awgn => "awgn",
            ChannelMode::Rayleigh => "rayleigh",
        })
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelMode::Awgn),
            "rayleigh" => Ok(ChannelMode::Rayleigh),
            other => Err(Error::Parameter(format!("unknown channel mode `{other}`"))),
        }
    }
}

/// The multiplicative part of a channel use: either the AWGN marker (`h ≡ 1`
/// and identity equalization weights) or per-symbol complex fading gains.
#[derive(Debug, Clone, PartialEq)]
pub enum Fading {
    Awgn,
    Rayleigh(Vec<Complex64>),
}

impl Fading {
    pub fn mode(&self) -> ChannelMode {
        match self {
            Fading::Awgn => ChannelMode::Awgn,
            Fading::Rayleigh(_) => ChannelMode::Rayleigh,
        }
    }

    /// Draw fresh gains for `mode`; AWGN consumes no randomness.
    pub fn draw<R: Rng + ?Sized>(mode: ChannelMode, k: usize, rng: &mut R) -> Self {
        match mode {
            ChannelMode::Awgn => Fading::Awgn,
            ChannelMode::Rayleigh => Fading::Rayleigh(sample_rayleigh_channel(k, rng)),
        }
    }

    fn gain(&self, i: usize) -> Complex64 {
        match self {
            Fading::Awgn => Complex64::new(1.0, 0.0),
            Fading::Rayleigh(h) => h[i],
        }
    }

    fn check_len(&self, k: usize) -> Result<()> {
        match self {
            Fading::Rayleigh(h) if h.len() != k => Err(Error::Dimension(format!(
                "{} fading gains for {k} symbols",
                h.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// A channel state as seen by the receiver, with the derived equalization
/// diagonals `h_r`, `W_s`, `W_n` (each length `2k`, symbol `i` duplicated into
/// positions `i` and `i+k`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub fading: Fading,
    pub sigma: f64,
    pub h_r: Vec<f64>,
    pub w_s_diag: Vec<f64>,
    pub w_n_diag: Vec<f64>,
}

impl ChannelRealization {
    /// AWGN realization: `h_r`, `W_s` and `W_n` are all ones.
    pub fn awgn(k: usize, sigma: f64) -> Self {
        let (w_s_diag, w_n_diag) = equalizer::awgn_weights(k);
        Self {
            fading: Fading::Awgn,
            sigma,
            h_r: vec![1.0; 2 * k],
            w_s_diag,
            w_n_diag,
        }
    }

    pub fn rayleigh(h_c: Vec<Complex64>, sigma: f64) -> Result<Self> {
        let (w_s_diag, w_n_diag) = equalizer::mmse_weights(&h_c, sigma)?;
        let moduli: Vec<f64> = h_c.iter().map(|h| h.norm()).collect();
        let h_r = [moduli.as_slice(), moduli.as_slice()].concat();
        Ok(Self {
            fading: Fading::Rayleigh(h_c),
            sigma,
            h_r,
            w_s_diag,
            w_n_diag,
        })
    }

    pub fn new(fading: Fading, k: usize, sigma: f64) -> Result<Self> {
        match fading {
            Fading::Awgn => Ok(Self::awgn(k, sigma)),
            Fading::Rayleigh(h) => {
                if h.len() != k {
                    return Err(Error::Dimension(format!("{} gains for k = {k}", h.len())));
                }
                Self::rayleigh(h, sigma)
            }
        }
    }

    pub fn k(&self) -> usize {
        self.h_r.len() / 2
    }
}

/// `x_c[i] = x[i] + j·x[i+k]`.
pub fn pack_complex(x: &[f64]) -> Result<ComplexSymbolBlock> {
    if x.is_empty() || x.len() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "cannot pack a real vector of length {} into complex symbols",
            x.len()
        )));
    }
    let k = x.len() / 2;
    ComplexSymbolBlock::from_parts(&x[..k], &x[k..])
}

/// Inverse of [`pack_complex`].
pub fn unpack_real(xc: &ComplexSymbolBlock) -> Vec<f64> {
    let mut out = xc.re();
    out.extend(xc.im());
    out
}

/// Scale the block so that `Σ |x_c,i|² = 1`.
pub fn normalize_power(xc: &ComplexSymbolBlock) -> Result<ComplexSymbolBlock> {
    let energy = xc.energy();
    if energy == 0.0 {
        return Err(Error::Degenerate("cannot normalize an all-zero block".into()));
    }
    if !energy.is_finite() {
        return Err(Error::NonFinite("block energy".into()));
    }
    let scale = energy.sqrt().recip();
    Ok(ComplexSymbolBlock::from_symbols(
        xc.symbols().iter().map(|c| c * scale).collect(),
    ))
}

/// Normalize a real block in place through its complex packing.
pub fn normalize_real(x: &mut [f64]) -> Result<()> {
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("cannot normalize an all-zero block".into()));
    }
    let scale = energy.sqrt().recip();
    x.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

/// I.i.d. `CN(0, 1)` gains: real and imaginary parts each `N(0, 1/2)`.
pub fn sample_rayleigh_channel<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..k)
        .map(|_| {
            let re = normal(rng) * s;
            let im = normal(rng) * s;
            Complex64::new(re, im)
        })
        .collect()
}

/// `y_c,i = h_c,i·x_c,i + n_c,i` with `n ~ CN(0, 2σ²)`.
///
/// Noise is drawn for every symbol even when `sigma == 0`, so two arms of a
/// paired comparison stay aligned on the same stream.
pub fn transmit<R: Rng + ?Sized>(
    xc: &ComplexSymbolBlock,
    fading: &Fading,
    sigma: f64,
    rng: &mut R,
) -> Result<ComplexSymbolBlock> {
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    fading.check_len(xc.k())?;
    let symbols = xc
        .symbols()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let n = Complex64::new(normal(rng) * sigma, normal(rng) * sigma);
            fading.gain(i) * x + n
        })
        .collect();
    Ok(ComplexSymbolBlock::from_symbols(symbols))
}

/// Noisy channel estimate `ĥ = h + Δh`, `Δh ~ CN(0, σ_h²)`.
pub fn perturb_estimate<R: Rng + ?Sized>(
    h: &[Complex64],
    sigma_h: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if !(sigma_h >= 0.0) {
        return Err(Error::Parameter(format!(
            "estimation error sigma must be >= 0, got {sigma_h}"
        )));
    }
    let s = sigma_h * std::f64::consts::FRAC_1_SQRT_2;
    Ok(h.iter()
        .map(|&g| g + Complex64::new(normal(rng) * s, normal(rng) * s))
        .collect())
}

/// Per-real-dimension noise std for a unit-power block at `snr_db`:
/// `SNR_dB = 10·log10(1/(2σ²))`.
pub fn sigma_from_snr_db(snr_db: f64) -> f64 {
    (0.5 * 10f64.powf(-snr_db / 10.0)).sqrt()
}

pub fn snr_db_from_sigma(sigma: f64) -> f64 {
    10.0 * (1.0 / (2.0 * sigma * sigma)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn pack_examples() {
        let c = pack_complex(&[1.0, 2.0]).unwrap();
        assert_eq!(c.re(), vec![1.0]);
        assert_eq!(c.im(), vec![2.0]);
        let c = pack_complex(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(c.re(), vec![1.0, 0.0]);
        assert_eq!(c.im(), vec![0.0, 1.0]);
    }

    #[test]
    fn pack_rejects_odd_length() {
        assert!(matches!(pack_complex(&[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
        assert!(matches!(pack_complex(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn unpack_examples() {
        let c = ComplexSymbolBlock::from_parts(&[3.0], &[4.0]).unwrap();
        assert_eq!(unpack_real(&c), vec![3.0, 4.0]);
        let c = ComplexSymbolBlock::from_parts(&[0.0], &[0.0]).unwrap();
        assert_eq!(unpack_real(&c), vec![0.0, 0.0]);
    }

    #[test]
    fn from_parts_rejects_mismatch() {
        assert!(matches!(
            ComplexSymbolBlock::from_parts(&[1.0, 2.0], &[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn real_block_validation() {
        assert!(RealSignalBlock::new(vec![1.0, 2.0]).is_ok());
        assert!(RealSignalBlock::new(vec![1.0]).is_err());
        assert!(RealSignalBlock::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let c = ComplexSymbolBlock::from_parts(&[2.0], &[0.0]).unwrap();
        let n = normalize_power(&c).unwrap();
        assert_eq!(n.re(), vec![1.0]);
        assert_eq!(n.im(), vec![0.0]);

        let c = ComplexSymbolBlock::from_parts(&[1.0], &[1.0]).unwrap();
        let n = normalize_power(&c).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((n.re()[0] - h).abs() < 1e-15);
        assert!((n.im()[0] - h).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_block() {
        let c = ComplexSymbolBlock::from_parts(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(normalize_power(&c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rayleigh_is_deterministic_per_seed() {
        let a = sample_rayleigh_channel(16, &mut stream(11, 0));
        let b = sample_rayleigh_channel(16, &mut stream(11, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_identity_and_fading() {
        let x = pack_complex(&[0.3, -0.1, 0.5, 0.2]).unwrap();
        let mut rng = stream(1, 0);
        let y = transmit(&x, &Fading::Awgn, 0.0, &mut rng).unwrap();
        assert_eq!(y, x);

        let h = vec![Complex64::new(0.5, -1.0), Complex64::new(2.0, 0.25)];
        let y = transmit(&x, &Fading::Rayleigh(h.clone()), 0.0, &mut rng).unwrap();
        for ((y, g), x) in y.symbols().iter().zip(&h).zip(x.symbols()) {
            assert_eq!(*y, g * x);
        }
    }

    #[test]
    fn transmit_rejects_negative_sigma() {
        let x = pack_complex(&[1.0, 0.0]).unwrap();
        let err = transmit(&x, &Fading::Awgn, -0.1, &mut stream(0, 0));
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn perturb_zero_is_identity() {
        let h = sample_rayleigh_channel(8, &mut stream(3, 0));
        assert_eq!(perturb_estimate(&h, 0.0, &mut stream(4, 0)).unwrap(), h);
        assert!(perturb_estimate(&h, -1.0, &mut stream(4, 0)).is_err());
    }

    #[test]
    fn snr_conversion_round_trips() {
        for snr in [-5.0, 0.0, 5.0, 20.0] {
            let s = sigma_from_snr_db(snr);
            assert!((snr_db_from_sigma(s) - snr).abs() < 1e-12);
        }
        // 0 dB ⇔ 2σ² = 1
        assert!((sigma_from_snr_db(0.0).powi(2) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(v in proptest::collection::vec(-1e6f64..1e6, 1..32)) {
            let mut v = v;
            if v.len() % 2 == 1 { v.push(0.0); }
            let c = pack_complex(&v).unwrap();
            prop_assert_eq!(unpack_real(&c), v.clone());
            prop_assert_eq!(pack_complex(&unpack_real(&c)).unwrap(), c);
        }

        #[test]
        fn normalized_energy_is_one(v in proptest::collection::vec(-10f64..10.0, 2..64)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let mut v = v;
            if v.len() % 2 == 1 { v.push(1.0); }
            let n = normalize_power(&pack_complex(&v).unwrap()).unwrap();
            prop_assert!((n.energy() - 1.0).abs() < 1e-12);
        }
    }
}
