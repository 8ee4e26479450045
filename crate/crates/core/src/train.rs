//! Denoiser training loop.
//!
//! Each example draws a source block `x`, a timestep `t` (see
//! [`TimestepSampling`]), a fading
//! state and `ε ~ N(0, I)`, then regresses `ε` from
//! `x_t = √ᾱ_t·W_s x + √(1−ᾱ_t)·W_n ε`. No target SNR enters the loop: under
//! Rayleigh fading the MMSE weights are formed at the noise level the schedule
//! itself reaches at `t`, `σ_t² = (1−ᾱ_t)/ᾱ_t`.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMode, ChannelRealization, Fading};
use crate::error::{Error, Result};
use crate::nn::{config_hash, Adam, Architecture, Batch, Checkpoint, Denoiser, LrSchedule, RngState};
use crate::rng::{self, fill_normal, Stream};
use crate::schedule::{DiffusionSchedule, ScheduleParams};
use crate::source::{Source, SourceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Channel uses per block; signals have length `2k`.
    pub k: usize,
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    pub channel: ChannelMode,
    /// Total optimizer steps.
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub hidden: usize,
    pub blocks: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    #[serde(default)]
    pub timestep_sampling: TimestepSampling,
    /// Decay of the parameter moving average used for inference; 0 keeps the
    /// raw weights.
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    pub schedule: ScheduleParams,
}

fn default_ema_decay() -> f64 {
    0.999
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 32,
            source: SourceKind::GaussianMixture,
            corpus_path: None,
            channel: ChannelMode::Awgn,
            steps: 12_000,
            batch: 128,
            seed: 0,
            hidden: 128,
            blocks: 2,
            learning_rate: 3e-3,
            warmup_steps: 200,
            timestep_sampling: TimestepSampling::LogMixture,
            ema_decay: default_ema_decay(),
            schedule: ScheduleParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::new(2 * self.k, self.hidden, self.blocks)
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule::warmup_cosine(self.learning_rate, self.warmup_steps, self.steps)
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.batch == 0 || self.hidden == 0 {
            return Err(Error::Config("k, batch and hidden must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

/// A single training example with every intermediate quantity.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub x: Vec<f64>,
    pub t: usize,
    pub channel: ChannelRealization,
    pub eps: Vec<f64>,
    pub x0: Vec<f64>,
    pub x_t: Vec<f64>,
}

pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, steps: usize) -> usize {
    rng.random_range(1..=steps)
}

/// How training draws `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepSampling {
    /// `t ~ U{1..T}`.
    #[default]
    Uniform,
    /// A mixture of uniform and `p(t) ∝ 1/t`, with each example weighted by
    /// `(1/T)/p(t)`. The expected loss equals the uniform one.
    LogMixture,
}

/// Share of the uniform component in [`TimestepSampling::LogMixture`].
pub const LOG_MIXTURE_UNIFORM_SHARE: f64 = 0.5;

/// Draws `t` and reports the importance weight that keeps the objective equal
/// to the uniform-`t` loss.
#[derive(Debug, Clone)]
pub struct TimestepSampler {
    steps: usize,
    mode: TimestepSampling,
    cdf: Vec<f64>,
}

impl TimestepSampler {
    pub fn new(steps: usize, mode: TimestepSampling) -> Self {
        let cdf = match mode {
            TimestepSampling::Uniform => Vec::new(),
            TimestepSampling::LogMixture => {
                let mut acc = 0.0;
                let mut cdf: Vec<f64> = (1..=steps)
                    .map(|t| {
                        acc += Self::log_mixture_mass(t, steps);
                        acc
                    })
                    .collect();
                let total = acc;
                cdf.iter_mut().for_each(|c| *c /= total);
                cdf
            }
        };
        Self { steps, mode, cdf }
    }

    fn harmonic(steps: usize) -> f64 {
        (1..=steps).map(|t| 1.0 / t as f64).sum()
    }

    fn log_mixture_mass(t: usize, steps: usize) -> f64 {
        let u = LOG_MIXTURE_UNIFORM_SHARE;
        u / steps as f64 + (1.0 - u) / (t as f64 * Self::harmonic(steps))
    }

    /// `p(t)`.
    pub fn probability(&self, t: usize) -> f64 {
        match self.mode {
            TimestepSampling::Uniform => 1.0 / self.steps as f64,
            TimestepSampling::LogMixture => {
                let prev = if t >= 2 { self.cdf[t - 2] } else { 0.0 };
                self.cdf[t - 1] - prev
            }
        }
    }

    /// `(1/T)/p(t)`.
    pub fn weight(&self, t: usize) -> f64 {
        1.0 / (self.steps as f64 * self.probability(t))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.mode {
            TimestepSampling::Uniform => sample_timestep(rng, self.steps),
            TimestepSampling::LogMixture => {
                let u: f64 = rng.random();
                (self.cdf.partition_point(|&c| c <= u) + 1).min(self.steps)
            }
        }
    }
}

/// Draw one example with `t ~ U{1..T}`. Under AWGN the weights are
/// identities.
pub fn draw_example<R: Rng + ?Sized>(
    source: &mut Source,
    schedule: &DiffusionSchedule,
    mode: ChannelMode,
    rng: &mut R,
) -> Result<TrainingExample> {
    let sampler = TimestepSampler::new(schedule.steps(), TimestepSampling::Uniform);
    draw_example_with(source, schedule, mode, &sampler, rng)
}

pub fn draw_example_with<R: Rng + ?Sized>(
    source: &mut Source,
    schedule: &DiffusionSchedule,
    mode: ChannelMode,
    sampler: &TimestepSampler,
    rng: &mut R,
) -> Result<TrainingExample> {
    let x = source.next_block(rng)?;
    let k = source.k();
    let t = sampler.sample(rng);
    let sigma_t = schedule.ratio(t).sqrt();
    let channel = match Fading::draw(mode, k, rng) {
        Fading::Awgn => ChannelRealization::awgn(k, sigma_t),
        Fading::Rayleigh(h) => ChannelRealization::rayleigh(h, sigma_t)?,
    };
    let mut eps = vec![0.0; 2 * k];
    fill_normal(rng, &mut eps);
    let x0: Vec<f64> = x.iter().zip(&channel.w_s_diag).map(|(a, w)| a * w).collect();
    let x_t = schedule.forward_diffuse(&x0, t, &channel.w_n_diag, &eps)?;
    Ok(TrainingExample {
        x,
        t,
        channel,
        eps,
        x0,
        x_t,
    })
}

pub struct Trainer {
    config: TrainConfig,
    schedule: DiffusionSchedule,
    net: Denoiser,
    adam: Adam,
    ema: Vec<f64>,
    lr: LrSchedule,
    rng: Stream,
    source: Source,
    sampler: TimestepSampler,
    trace: Vec<TraceRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schedule = DiffusionSchedule::from_params(config.schedule)?;
        let net = Denoiser::init(config.architecture(), &mut rng::stream(config.seed, rng::ids::INIT))?;
        let source = Source::new(config.source, config.k, config.corpus_path.as_deref())?;
        Ok(Self {
            adam: Adam::new(net.params().len()),
            ema: net.params().to_vec(),
            lr: config.lr_schedule(),
            rng: rng::stream(config.seed, rng::ids::TRAIN),
            schedule,
            net,
            source,
            sampler: TimestepSampler::new(config.schedule.steps, config.timestep_sampling),
            trace: Vec::new(),
            config,
        })
    }

    /// Resume from a snapshot. The subsequent loss trace is identical to the
    /// one the original run would have produced.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = toml::from_str(&ckpt.config_toml)
            .map_err(|e| Error::Incompatible(format!("embedded training config: {e}")))?;
        if config.architecture() != ckpt.architecture || config.schedule != ckpt.schedule {
            return Err(Error::Incompatible(
                "embedded config disagrees with checkpoint header".into(),
            ));
        }
        let mut source = Source::new(config.source, config.k, config.corpus_path.as_deref())?;
        source.seek_corpus(ckpt.corpus_cursor)?;
        Ok(Self {
            schedule: DiffusionSchedule::from_params(ckpt.schedule)?,
            net: ckpt.training_denoiser()?,
            adam: ckpt.optimizer.clone(),
            ema: ckpt.ema.clone(),
            lr: config.lr_schedule(),
            rng: ckpt.rng.restore(),
            source,
            sampler: TimestepSampler::new(config.schedule.steps, config.timestep_sampling),
            trace: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    /// The weights being optimized.
    pub fn denoiser(&self) -> &Denoiser {
        &self.net
    }

    /// The moving-average weights used for inference.
    pub fn averaged_denoiser(&self) -> Denoiser {
        Denoiser::from_params(*self.net.architecture(), self.ema.clone())
            .expect("average of finite parameters")
    }

    pub fn into_denoiser(self) -> Denoiser {
        self.averaged_denoiser()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Optimizer steps taken so far, including those before a resume.
    pub fn steps_done(&self) -> u64 {
        self.adam.step
    }

    pub fn snapshot(&self) -> Checkpoint {
        let config_toml = self.config.to_toml();
        Checkpoint {
            architecture: *self.net.architecture(),
            schedule: self.schedule.params(),
            config_hash: config_hash(&config_toml),
            config_toml,
            optimizer: self.adam.clone(),
            rng: RngState::capture(&self.rng),
            corpus_cursor: self.source.corpus_cursor(),
            params: self.net.params().to_vec(),
            ema: self.ema.clone(),
        }
    }

    fn draw_batch(&mut self) -> Result<Batch> {
        let b = self.config.batch;
        let n = 2 * self.config.k;
        let mut x_t = Array2::zeros((b, n));
        let mut h_r = Array2::zeros((b, n));
        let mut eps = Array2::zeros((b, n));
        let mut t = Vec::with_capacity(b);
        let weighted = self.config.timestep_sampling != TimestepSampling::Uniform;
        let mut weight = Array2::zeros(if weighted { (b, n) } else { (0, 0) });
        for i in 0..b {
            let ex = draw_example_with(
                &mut self.source,
                &self.schedule,
                self.config.channel,
                &self.sampler,
                &mut self.rng,
            )?;
            x_t.row_mut(i).assign(&ndarray::ArrayView1::from(&ex.x_t));
            h_r.row_mut(i).assign(&ndarray::ArrayView1::from(&ex.channel.h_r));
            eps.row_mut(i).assign(&ndarray::ArrayView1::from(&ex.eps));
            if weighted {
                weight.row_mut(i).fill(self.sampler.weight(ex.t).sqrt());
            }
            t.push(ex.t);
        }
        Ok(Batch {
            x_t,
            h_r,
            t,
            eps,
            weight: weighted.then_some(weight),
        })
    }

    /// One optimizer step. A non-finite loss or gradient leaves the trainer
    /// untouched apart from the consumed random draws and reports the last
    /// good state.
    pub fn step(&mut self) -> Result<TraceRow> {
        let last_good = self.snapshot();
        let batch = self.draw_batch()?;
        let (loss, grads) = self.net.grad_loss(&batch)?;
        let diverged = |loss| Error::Diverged {
            step: last_good.optimizer.step + 1,
            loss,
            last_good: Box::new(last_good.clone()),
        };
        if !loss.is_finite() {
            return Err(diverged(loss));
        }
        let rate = match self.adam.update(self.net.params_mut(), &grads, &self.lr) {
            Ok(rate) => rate,
            Err(Error::NonFinite(_)) => return Err(diverged(loss)),
            Err(e) => return Err(e),
        };
        if self.net.params().iter().any(|p| !p.is_finite()) {
            return Err(diverged(loss));
        }
        let s = self.adam.step as f64;
        let d = self.config.ema_decay.min((1.0 + s) / (10.0 + s));
        for (e, &p) in self.ema.iter_mut().zip(self.net.params()) {
            *e = d * *e + (1.0 - d) * p;
        }
        let row = TraceRow {
            step: self.adam.step,
            loss,
            learning_rate: rate,
        };
        self.trace.push(row);
        Ok(row)
    }

    /// Run until the configured step budget is spent.
    pub fn run(&mut self) -> Result<()> {
        self.run_steps(self.config.steps.saturating_sub(self.adam.step))
    }

    pub fn run_steps(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            let row = self.step()?;
            if row.step % 500 == 0 {
                log::info!("step {} loss {:.4} lr {:.2e}", row.step, row.loss, row.learning_rate);
            }
        }
        Ok(())
    }
}

/// Train from scratch with the full step budget.
pub fn train(config: TrainConfig) -> Result<Trainer> {
    let mut trainer = Trainer::new(config)?;
    trainer.run()?;
    Ok(trainer)
}

/// Loss trace as CSV with columns `step,loss,learning_rate`.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))
}

pub fn save_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(file, trace)
}

/// Mean of the last `window` losses.
pub fn smoothed_loss(trace: &[TraceRow], window: usize) -> f64 {
    let tail = &trace[trace.len().saturating_sub(window)..];
    tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
}
