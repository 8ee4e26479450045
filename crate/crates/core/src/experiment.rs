//! Experiment harness: MSE-versus-SNR sweeps with and without the reverse
//! sampler, entropy reports, and the on-disk layout of a run.
//!
//! A run lives in `<out_dir>/<run_id>/` and holds one CSV per experiment plus
//! a `manifest.toml` carrying the resolved config, seed and SNR convention.
//! Existing run directories are never overwritten.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelMode, Fading};
use crate::entropy::{self, MonteCarloReport, ReportSettings, TauChoice, TmaxRecommendation};
use crate::equalizer;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Denoiser};
use crate::rng::{self, ids, substream};
use crate::sample::{sample_batch, NoisePredictor};
use crate::schedule::{DiffusionSchedule, MSelection, ScheduleParams};
use crate::source::{Source, SourceKind};
use crate::train::{self, TimestepSampling, TrainConfig};

/// Conversion between SNR and noise level, written into every manifest.
pub const SNR_CONVENTION: &str =
    "SNR_dB = 10*log10(1/(2*sigma^2)); blocks have sum |x_c|^2 = 1, complex noise CN(0, 2*sigma^2)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub mode: ChannelMode,
    pub snr_db: Vec<f64>,
    /// Channel-estimation error levels; ignored by AWGN.
    pub sigma_h: Vec<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            mode: ChannelMode::Awgn,
            snr_db: vec![5.0, 10.0, 15.0, 20.0],
            sigma_h: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub kind: SourceKind,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            kind: SourceKind::GaussianMixture,
            k: 32,
            corpus_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub m_mode: MSelection,
    /// Blocks simulated per grid point in `mse-bench`.
    pub blocks: usize,
    /// Blocks written out by `sample`.
    pub sample_blocks: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            m_mode: MSelection::KlZero,
            blocks: 2000,
            sample_blocks: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub timestep_sampling: TimestepSampling,
    pub ema_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            batch: d.batch,
            hidden: d.hidden,
            blocks: d.blocks,
            learning_rate: d.learning_rate,
            warmup_steps: d.warmup_steps,
            timestep_sampling: d.timestep_sampling,
            ema_decay: d.ema_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySection {
    pub samples: usize,
    pub t_first: usize,
    pub t_last: usize,
    pub t_stride: usize,
    /// `τ` in the sufficient condition: a number or `"estimated"` for `τ̂`.
    pub tau: TauChoice,
    /// `τ` of the margin curve used to find where it flattens.
    pub curve_tau: f64,
    pub percentile: f64,
    /// Inclusive step window searched for the `t_max` recommendation.
    pub window: [usize; 2],
}

impl Default for EntropySection {
    fn default() -> Self {
        Self {
            samples: 10_000,
            t_first: 2,
            t_last: 150,
            t_stride: 1,
            tau: TauChoice::default(),
            curve_tau: entropy::DEFAULT_CURVE_TAU,
            percentile: entropy::DEFAULT_TAU_PERCENTILE,
            window: [10, 150],
        }
    }
}

impl EntropySection {
    pub fn steps(&self) -> Vec<usize> {
        (self.t_first..=self.t_last).step_by(self.t_stride.max(1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Trained model to evaluate. Without one, the model is trained in-process
    /// from `[train]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Worker threads for grid points; results do not depend on it.
    pub threads: usize,
    pub channel: ChannelSection,
    pub source: SourceSection,
    pub schedule: ScheduleParams,
    pub sampling: SamplingSection,
    pub train: TrainSection,
    pub entropy: EntropySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 0,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            threads: 1,
            channel: ChannelSection::default(),
            source: SourceSection::default(),
            schedule: ScheduleParams::default(),
            sampling: SamplingSection::default(),
            train: TrainSection::default(),
            entropy: EntropySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id == ".." {
            return bad(format!("run_id {:?} is not a plain directory name", self.run_id));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.channel.snr_db.is_empty() {
            return bad("channel.snr_db is empty".into());
        }
        if let Some(s) = self.channel.snr_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("SNR {s} dB does not map to a positive finite sigma"));
        }
        if self.channel.sigma_h.is_empty() {
            return bad("channel.sigma_h is empty (use [0.0] for a perfect estimate)".into());
        }
        if let Some(s) = self.channel.sigma_h.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("sigma_h {s} must be finite and >= 0"));
        }
        if self.source.k == 0 {
            return bad("source.k must be positive".into());
        }
        if self.sampling.blocks == 0 {
            return bad("sampling.blocks must be positive".into());
        }
        let e = &self.entropy;
        if e.t_first < 2 || e.t_last < e.t_first || e.t_last > self.schedule.steps {
            return bad(format!(
                "entropy steps {}..={} must lie in 2..={}",
                e.t_first, e.t_last, self.schedule.steps
            ));
        }
        if e.samples == 0 || !(0.0..=1.0).contains(&e.percentile) || e.window[0] > e.window[1] {
            return bad("entropy samples, percentile or window out of range".into());
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::from_params(self.schedule).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k: self.source.k,
            source: self.source.kind,
            corpus_path: self.source.corpus_path.clone(),
            channel: self.channel.mode,
            steps: self.train.steps,
            batch: self.train.batch,
            seed: self.seed,
            hidden: self.train.hidden,
            blocks: self.train.blocks,
            learning_rate: self.train.learning_rate,
            warmup_steps: self.train.warmup_steps,
            timestep_sampling: self.train.timestep_sampling,
            ema_decay: self.train.ema_decay,
            schedule: self.schedule,
        }
    }

    fn new_source(&self) -> Result<Source> {
        Source::new(self.source.kind, self.source.k, self.source.corpus_path.as_deref())
    }
}

/// Where the evaluated model came from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelOrigin {
    Checkpoint { path: PathBuf, config_hash: u64, steps: u64 },
    TrainedInProcess { steps: u64 },
}

/// Load `config.checkpoint`, or train from `[train]` when none is given.
pub fn obtain_denoiser(config: &ExperimentConfig) -> Result<(Denoiser, ModelOrigin)> {
    match &config.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            check_compatible(&ckpt, config)?;
            let origin = ModelOrigin::Checkpoint {
                path: path.clone(),
                config_hash: ckpt.config_hash,
                steps: ckpt.optimizer.step,
            };
            Ok((ckpt.denoiser()?, origin))
        }
        None => {
            let trainer = train::train(config.train_config())?;
            let steps = trainer.steps_done();
            Ok((trainer.into_denoiser(), ModelOrigin::TrainedInProcess { steps }))
        }
    }
}

/// The checkpoint must match the signal length and the noise schedule the
/// experiment samples with. `t_max` may differ.
pub fn check_compatible(ckpt: &Checkpoint, config: &ExperimentConfig) -> Result<()> {
    let want = 2 * config.source.k;
    if ckpt.architecture.signal_dim != want {
        return Err(Error::Incompatible(format!(
            "checkpoint denoises length-{} signals, experiment uses 2k = {want}",
            ckpt.architecture.signal_dim
        )));
    }
    let (a, b) = (&ckpt.schedule, &config.schedule);
    if a.steps != b.steps || a.alpha_first != b.alpha_first || a.alpha_last != b.alpha_last {
        return Err(Error::Incompatible(format!(
            "checkpoint schedule (T={}, {}..{}) differs from experiment (T={}, {}..{})",
            a.steps, a.alpha_first, a.alpha_last, b.steps, b.alpha_first, b.alpha_last
        )));
    }
    Ok(())
}

/// One grid point of the MSE sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub channel: ChannelMode,
    pub snr_db: f64,
    pub sigma: f64,
    pub sigma_h: f64,
    pub m: usize,
    pub blocks: usize,
    /// `MSE(x, y)` after the reverse sampler.
    pub mse_with_cddm: f64,
    /// `MSE(x, y_r)` straight out of the equalizer.
    pub mse_without_cddm: f64,
    pub mse_with_cddm_db: f64,
    pub mse_without_cddm_db: f64,
    /// `mse_without_cddm_db − mse_with_cddm_db`; positive when sampling helps.
    pub gain_db: f64,
    /// Same comparison against `x_0 = W_s x`.
    pub mse_x0_with_cddm: f64,
    pub mse_x0_without_cddm: f64,
    /// Kept out of the CSV so repeated runs stay byte-identical; recorded in
    /// the manifest instead.
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn db(v: f64) -> f64 {
    10.0 * v.log10()
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Map `f` over `items` on up to `threads` scoped workers, preserving order.
fn parallel_map<T, U, F>(items: &[T], threads: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<U>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                scope.spawn(move || {
                    (w..items.len())
                        .step_by(threads)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Paired observations for one grid point: the equalizer output and the
/// receiver-side quantities the sampler needs, block by block.
pub struct SimulatedBatch {
    pub x: Array2<f64>,
    pub x0: Array2<f64>,
    pub y_r: Array2<f64>,
    pub h_r: Array2<f64>,
    pub w_n: Array2<f64>,
}

/// Simulate `blocks` transmissions at noise level `sigma`. Under Rayleigh the
/// receiver equalizes with `ĥ = h + Δh`; `x_0` uses the receiver's `W_s`.
pub fn simulate_blocks<R: rand::Rng + ?Sized>(
    source: &mut Source,
    mode: ChannelMode,
    sigma: f64,
    sigma_h: f64,
    blocks: usize,
    rng: &mut R,
) -> Result<SimulatedBatch> {
    let k = source.k();
    let n = 2 * k;
    let mut out = SimulatedBatch {
        x: Array2::zeros((blocks, n)),
        x0: Array2::zeros((blocks, n)),
        y_r: Array2::zeros((blocks, n)),
        h_r: Array2::zeros((blocks, n)),
        w_n: Array2::zeros((blocks, n)),
    };
    for b in 0..blocks {
        let x = source.next_block(rng)?;
        let fading = Fading::draw(mode, k, rng);
        let yc = channel::transmit(&channel::pack_complex(&x)?, &fading, sigma, rng)?;
        let estimate = match &fading {
            Fading::Rayleigh(h) if sigma_h > 0.0 => {
                Fading::Rayleigh(channel::perturb_estimate(h, sigma_h, rng)?)
            }
            other => other.clone(),
        };
        let obs = equalizer::receive(&yc, &estimate, sigma)?;
        let row = |v: &[f64]| ndarray::ArrayView1::from(v).to_owned();
        let x0: Vec<f64> = x.iter().zip(&obs.channel.w_s_diag).map(|(a, w)| a * w).collect();
        out.x.row_mut(b).assign(&row(&x));
        out.x0.row_mut(b).assign(&row(&x0));
        out.y_r.row_mut(b).assign(&row(&obs.y_r));
        out.h_r.row_mut(b).assign(&row(&obs.channel.h_r));
        out.w_n.row_mut(b).assign(&row(&obs.channel.w_n_diag));
    }
    Ok(out)
}

/// MSE with and without the sampler at every `(SNR, σ_h)` pair. Both arms see
/// the identical source blocks, fading and noise.
pub fn run_mse_experiment<P: NoisePredictor + Sync + ?Sized>(
    config: &ExperimentConfig,
    predictor: &P,
) -> Result<Vec<MetricsRecord>> {
    let schedule = config.schedule()?;
    let grid: Vec<(usize, usize)> = (0..config.channel.snr_db.len())
        .flat_map(|i| (0..config.channel.sigma_h.len()).map(move |j| (i, j)))
        .collect();
    parallel_map(&grid, config.threads, |&(i, j)| {
        mse_grid_point(config, predictor, &schedule, i, j)
    })
}

fn mse_grid_point<P: NoisePredictor + ?Sized>(
    config: &ExperimentConfig,
    predictor: &P,
    schedule: &DiffusionSchedule,
    snr_index: usize,
    sigma_h_index: usize,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let snr_db = config.channel.snr_db[snr_index];
    let sigma_h = config.channel.sigma_h[sigma_h_index];
    let sigma = channel::sigma_from_snr_db(snr_db);
    let m = schedule.select_m(sigma, config.sampling.m_mode)?;
    let index = ((snr_index as u64) << 16) | sigma_h_index as u64;
    let mut rng = rng::stream(config.seed, substream(ids::MSE_BENCH, index));
    let mut source = config.new_source()?;
    let sim = simulate_blocks(
        &mut source,
        config.channel.mode,
        sigma,
        sigma_h,
        config.sampling.blocks,
        &mut rng,
    )?;
    let y = sample_batch(
        predictor,
        sim.y_r.clone(),
        sim.h_r.view(),
        sim.w_n.view(),
        m,
        schedule,
    )?;
    let with = mse(&sim.x, &y);
    let without = mse(&sim.x, &sim.y_r);
    if !with.is_finite() || !without.is_finite() {
        return Err(Error::NonFinite(format!("MSE at SNR {snr_db} dB")));
    }
    Ok(MetricsRecord {
        run_id: config.run_id.clone(),
        seed: config.seed,
        channel: config.channel.mode,
        snr_db,
        sigma,
        sigma_h,
        m,
        blocks: config.sampling.blocks,
        mse_with_cddm: with,
        mse_without_cddm: without,
        mse_with_cddm_db: db(with),
        mse_without_cddm_db: db(without),
        gain_db: db(without) - db(with),
        mse_x0_with_cddm: mse(&sim.x0, &y),
        mse_x0_without_cddm: mse(&sim.x0, &sim.y_r),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Metrics as CSV, one row per record, columns in struct order.
pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))
}

/// Entropy report over the configured step grid, plus the `t_max`
/// recommendation.
pub fn run_entropy_experiment<P: NoisePredictor + Sync + ?Sized>(
    config: &ExperimentConfig,
    predictor: &P,
) -> Result<(MonteCarloReport, TmaxRecommendation)> {
    let schedule = config.schedule()?;
    let e = &config.entropy;
    let steps = e.steps();
    let chunks: Vec<Vec<usize>> = {
        let per = steps.len().div_ceil(config.threads.max(1));
        steps.chunks(per.max(1)).map(<[usize]>::to_vec).collect()
    };
    let parts = parallel_map(&chunks, config.threads, |chunk| {
        let settings = ReportSettings {
            steps: chunk.clone(),
            samples: e.samples,
            percentile: e.percentile,
            tau: e.tau,
            curve_tau: e.curve_tau,
            channel: config.channel.mode,
        };
        entropy::build_report(
            predictor,
            &mut || config.new_source(),
            &schedule,
            &settings,
            || rng::stream(config.seed, ids::ENTROPY),
        )
    })?;
    let mut rows = Vec::with_capacity(steps.len());
    for p in parts {
        rows.extend(p.rows);
    }
    if rows.iter().all(|r| r.mean_eps_sq == 0.0) {
        log::warn!("predictor output is identically zero; the entropy report is degenerate");
    }
    let report = MonteCarloReport {
        rows,
        samples: e.samples,
        percentile: e.percentile,
        tau: e.tau,
        curve_tau: e.curve_tau,
        channel: config.channel.mode,
    };
    let rec = entropy::recommend_tmax(&report, e.window[0]..=e.window[1]);
    Ok((report, rec))
}

/// One coordinate of one denoised block from the `sample` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub block: usize,
    pub coord: usize,
    pub snr_db: f64,
    pub m: usize,
    pub x: f64,
    pub y_r: f64,
    pub y: f64,
}

/// Denoise `sampling.sample_blocks` fresh blocks at `snr_db`.
pub fn run_sample<P: NoisePredictor + ?Sized>(
    config: &ExperimentConfig,
    predictor: &P,
    snr_db: f64,
) -> Result<Vec<SampleRow>> {
    let schedule = config.schedule()?;
    let sigma = channel::sigma_from_snr_db(snr_db);
    let m = schedule.select_m(sigma, config.sampling.m_mode)?;
    let mut rng = rng::stream(config.seed, ids::SAMPLE_CLI);
    let mut source = config.new_source()?;
    let sigma_h = config.channel.sigma_h.first().copied().unwrap_or(0.0);
    let blocks = config.sampling.sample_blocks.max(1);
    let sim = simulate_blocks(&mut source, config.channel.mode, sigma, sigma_h, blocks, &mut rng)?;
    let y = sample_batch(predictor, sim.y_r.clone(), sim.h_r.view(), sim.w_n.view(), m, &schedule)?;
    let mut rows = Vec::with_capacity(y.len());
    for ((b, c), &yv) in y.indexed_iter() {
        rows.push(SampleRow {
            block: b,
            coord: c,
            snr_db,
            m,
            x: sim.x[[b, c]],
            y_r: sim.y_r[[b, c]],
            y: yv,
        });
    }
    Ok(rows)
}

/// Samples as CSV with columns `block,coord,snr_db,m,x,y_r,y`.
pub fn write_samples_csv<W: Write>(out: W, rows: &[SampleRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<samples>", e))
}

/// Create `<out_dir>/<run_id>`, refusing to reuse an existing directory.
pub fn create_run_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let dir = config.out_dir.join(&config.run_id);
    match fs::create_dir(&dir) {
        Ok(()) => Ok(dir),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunExists(dir)),
        Err(e) => Err(Error::io(dir, e)),
    }
}

/// Contents of `manifest.toml`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub run: RunInfo,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub run_id: String,
    pub seed: u64,
    pub snr_convention: String,
    pub version: String,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid_wall_time_s: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_t_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl RunInfo {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            run_id: config.run_id.clone(),
            seed: config.seed,
            snr_convention: SNR_CONVENTION.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
            model: None,
            grid_wall_time_s: Vec::new(),
            recommended_t_max: None,
            warning: None,
        }
    }
}

impl ModelOrigin {
    pub fn describe(&self) -> String {
        match self {
            ModelOrigin::Checkpoint { path, config_hash, steps } => format!(
                "checkpoint {} (config hash {config_hash:016x}, {steps} steps)",
                path.display()
            ),
            ModelOrigin::TrainedInProcess { steps } => format!("trained in-process for {steps} steps"),
        }
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join("manifest.toml");
    let text = toml::to_string(manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Write `name` inside `dir` through `f`.
pub fn write_output<F>(dir: &Path, name: &str, f: F) -> Result<PathBuf>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
