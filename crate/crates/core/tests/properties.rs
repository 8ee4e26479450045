use cddm::channel::{pack_complex, transmit};
use cddm::entropy::{conditional_entropy_step, f_tau, u_tau};
use cddm::equalizer::{conditional_moments, receive};
use cddm::rng::{fill_normal, stream};
use cddm::sample::{estimate_x0, sample_batch, sample_step, NoisePredictor};
use cddm::source::sample_source;
use cddm::{ChannelMode, ChannelRealization, DiffusionSchedule, Fading, MSelection, Result, SourceKind};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;

struct Fixed(Array2<f64>);

impl NoisePredictor for Fixed {
    fn predict_batch(&self, _: ArrayView2<f64>, _: ArrayView2<f64>, _: usize) -> Result<Array2<f64>> {
        Ok(self.0.clone())
    }
}

fn mode_strategy() -> impl Strategy<Value = ChannelMode> {
    prop_oneof![Just(ChannelMode::Awgn), Just(ChannelMode::Rayleigh)]
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn true_noise_inverts_the_forward_process(
        seed in any::<u64>(),
        k in 1usize..12,
        sigma in 0.01f64..2.0,
        m in 1usize..=93,
        mode in mode_strategy(),
    ) {
        let schedule = DiffusionSchedule::default();
        let mut rng = stream(seed, 0);
        let x = sample_source(SourceKind::GaussianMixture, k, &mut rng).unwrap();
        let ch = ChannelRealization::new(Fading::draw(mode, k, &mut rng), k, sigma).unwrap();
        let x0: Vec<f64> = x.iter().zip(&ch.w_s_diag).map(|(a, w)| a * w).collect();
        let mut eps = vec![0.0; 2 * k];
        fill_normal(&mut rng, &mut eps);
        let x_m = schedule.forward_diffuse(&x0, m, &ch.w_n_diag, &eps).unwrap();
        let out = sample_batch(&Fixed(row(&eps)), row(&x_m), row(&ch.h_r).view(), row(&ch.w_n_diag).view(), m, &schedule).unwrap();
        for (a, b) in out.iter().zip(&x0) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn batched_sampler_matches_single_steps(
        seed in any::<u64>(),
        k in 1usize..6,
        m in 1usize..=40,
    ) {
        let schedule = DiffusionSchedule::default();
        let mut rng = stream(seed, 1);
        let mut v = vec![0.0; 6 * k];
        fill_normal(&mut rng, &mut v);
        let (x, rest) = v.split_at(2 * k);
        let (eps, w) = rest.split_at(2 * k);
        let w: Vec<f64> = w.iter().map(|a| 0.1 + a.abs()).collect();

        let mut state = x.to_vec();
        for t in (2..=m).rev() {
            state = sample_step(&state, eps, &w, t, &schedule).unwrap();
        }
        let expected = estimate_x0(&state, eps, &w, 1, &schedule).unwrap();
        let got = sample_batch(&Fixed(row(eps)), row(x), row(&w).view(), row(&w).view(), m, &schedule).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn noiseless_observation_is_the_conditional_mean(
        seed in any::<u64>(),
        k in 1usize..16,
        sigma in 0.01f64..2.0,
        mode in mode_strategy(),
    ) {
        let mut rng = stream(seed, 2);
        let x = sample_source(SourceKind::UnitSphere, k, &mut rng).unwrap();
        let fading = Fading::draw(mode, k, &mut rng);
        let yc = transmit(&pack_complex(&x).unwrap(), &fading, 0.0, &mut rng).unwrap();
        let obs = receive(&yc, &fading, sigma).unwrap();
        let (mean, var) = conditional_moments(&x, &obs.channel).unwrap();
        for (y, m) in obs.y_r.iter().zip(&mean) {
            prop_assert!((y - m).abs() <= 1e-12);
        }
        let s2 = sigma * sigma;
        for (v, w) in var.iter().zip(&obs.channel.w_n_diag) {
            prop_assert!((v - s2 / (1.0 + s2) * w * w).abs() <= 1e-15);
        }
    }

    #[test]
    fn sources_emit_unit_energy_blocks(
        seed in any::<u64>(),
        k in 1usize..40,
        kind in prop_oneof![
            Just(SourceKind::GaussianMixture),
            Just(SourceKind::UnitSphere),
            Just(SourceKind::Sparse),
        ],
    ) {
        let x = sample_source(kind, k, &mut stream(seed, 3)).unwrap();
        prop_assert_eq!(x.len(), 2 * k);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((energy - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bound_meets_entropy_at_the_threshold(
        t in 2usize..=200,
        tau in 0.0f64..3.0,
        w in 0.05f64..2.0,
    ) {
        let s = DiffusionSchedule::default();
        let f = f_tau(t, tau, &s).unwrap();
        let h = conditional_entropy_step(t, w, &s).unwrap();
        let u = u_tau(t, tau, f, w, &s).unwrap();
        prop_assert!((u - h).abs() <= 1e-9);
    }

    #[test]
    fn selected_m_is_monotone_in_sigma(a in 0.0f64..1.5, b in 0.0f64..1.5) {
        let s = DiffusionSchedule::default().with_t_max(1000).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(s.select_m(lo, MSelection::KlZero).unwrap() <= s.select_m(hi, MSelection::KlZero).unwrap());
        prop_assert!(s.select_m(lo, MSelection::KlZero).unwrap() <= s.select_m(lo, MSelection::LiteralEq20).unwrap());
    }
}

#[test]
fn steps_for_reference_snrs() {
    // ratio (1-ᾱ_m)/ᾱ_m closest to σ² = 1/(2·10^(snr/10)), recomputed from the raw α list
    let s = DiffusionSchedule::default();
    let oracle = |snr_db: f64| {
        let target = 1.0 / (2.0 * 10f64.powf(snr_db / 10.0));
        let mut ab = 1.0;
        let mut best = (f64::INFINITY, 0);
        for t in 1..=1000 {
            ab *= 0.9999 + (0.98 - 0.9999) * (t - 1) as f64 / 999.0;
            let gap = ((1.0 - ab) / ab - target).abs();
            if gap < best.0 {
                best = (gap, t);
            }
        }
        best.1.min(93)
    };
    for (snr, expected) in [(5.0, 93), (10.0, 66), (20.0, 18)] {
        let sigma = cddm::channel::sigma_from_snr_db(snr);
        assert_eq!(oracle(snr), expected);
        assert_eq!(s.select_m(sigma, MSelection::KlZero).unwrap(), expected);
    }
}
