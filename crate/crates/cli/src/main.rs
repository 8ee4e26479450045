//! `cddm`: train channel denoisers, run MSE and entropy experiments, and
//! inspect checkpoints.
//!
//! Every experiment subcommand reads a TOML config (`--config`), applies flag
//! overrides, and writes its outputs plus `manifest.toml` into
//! `<out>/<run-id>/`. SNR is converted with `SNR_dB = 10·log10(1/(2σ²))` for
//! unit-power blocks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cddm::entropy::write_report_csv;
use cddm::experiment::{
    self, create_run_dir, obtain_denoiser, write_manifest, write_metrics_csv, write_output,
    ExperimentConfig, Manifest, RunInfo,
};
use cddm::train::{write_trace_csv, Trainer};
use cddm::{ChannelMode, Checkpoint, Error, MSelection};
use clap::{Args, Parser, Subcommand};

/// Exit codes, one per failure class.
mod exit {
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const CHECKPOINT: u8 = 4;
    pub const RUN_EXISTS: u8 = 5;
    pub const IO: u8 = 6;
}

#[derive(Parser)]
#[command(name = "cddm", version, about = "Channel denoising diffusion experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser and save a checkpoint plus its loss trace.
    Train(RunArgs),
    /// Denoise a few fresh blocks and write them coordinate by coordinate.
    Sample(RunArgs),
    /// MSE with and without the reverse sampler over the SNR and sigma_h grid.
    MseBench(RunArgs),
    /// Monte Carlo entropy report and t_max recommendation.
    EntropyReport(RunArgs),
    /// Print a checkpoint's architecture, schedule and training progress.
    InspectCheckpoint {
        /// Checkpoint file.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Comma-separated SNR list in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Comma-separated channel-estimation error levels.
    #[arg(long, value_delimiter = ',')]
    sigma_h: Option<Vec<f64>>,
    #[arg(long)]
    channel: Option<ChannelMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    m_mode: Option<MSelection>,
    #[arg(long)]
    t_max: Option<usize>,
    /// Output directory; the run lands in `<out>/<run-id>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Model to evaluate, or for `train` where to write the trained model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Worker threads for grid points; outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut c = ExperimentConfig::load(&self.config).map_err(|e| match e {
            Error::Io { path, source } => {
                Error::Config(format!("cannot read config {}: {source}", path.display()))
            }
            other => other,
        })?;
        if let Some(v) = &self.snr_db {
            c.channel.snr_db = v.clone();
        }
        if let Some(v) = &self.sigma_h {
            c.channel.sigma_h = v.clone();
        }
        if let Some(v) = self.channel {
            c.channel.mode = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.steps {
            c.train.steps = v;
        }
        if let Some(v) = self.m_mode {
            c.sampling.m_mode = v;
        }
        if let Some(v) = self.t_max {
            c.schedule.t_max = v;
        }
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        if let Some(v) = &self.run_id {
            c.run_id = v.clone();
        }
        if let Some(v) = self.threads {
            c.threads = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => exit::CONFIG,
        Error::Format(_) | Error::VersionMismatch { .. } | Error::Incompatible(_) => {
            exit::CHECKPOINT
        }
        Error::RunExists(_) => exit::RUN_EXISTS,
        Error::Io { .. } | Error::Csv(_) => exit::IO,
        _ => exit::FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Train(a) => a.resolve().and_then(|c| cmd_train(&c, a.checkpoint.as_deref())),
        Command::Sample(a) => a.resolve().and_then(|c| with_model(c, a, cmd_sample)),
        Command::MseBench(a) => a.resolve().and_then(|c| with_model(c, a, cmd_mse_bench)),
        Command::EntropyReport(a) => a.resolve().and_then(|c| with_model(c, a, cmd_entropy)),
        Command::InspectCheckpoint { path } => cmd_inspect(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type ModelCommand = fn(&ExperimentConfig, &cddm::Denoiser, RunInfo, &Path) -> Result<(), Error>;

/// Resolve the model, create the run directory and hand both to `f`.
fn with_model(mut config: ExperimentConfig, args: &RunArgs, f: ModelCommand) -> Result<(), Error> {
    if let Some(path) = &args.checkpoint {
        config.checkpoint = Some(path.clone());
    }
    let dir = create_run_dir(&config)?;
    let started = Instant::now();
    let (net, origin) = obtain_denoiser(&config)?;
    log::info!("model: {}", origin.describe());
    let mut info = RunInfo::new("", &config);
    info.model = Some(origin.describe());
    info.wall_time_s = started.elapsed().as_secs_f64();
    f(&config, &net, info, &dir)
}

fn finish(dir: &Path, mut info: RunInfo, config: &ExperimentConfig, started: Instant) -> Result<(), Error> {
    info.wall_time_s += started.elapsed().as_secs_f64();
    let manifest = write_manifest(
        dir,
        &Manifest {
            run: info,
            config: config.clone(),
        },
    )?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn cmd_train(config: &ExperimentConfig, out_ckpt: Option<&Path>) -> Result<(), Error> {
    let dir = create_run_dir(config)?;
    let started = Instant::now();
    let mut trainer = Trainer::new(config.train_config())?;
    trainer.run()?;
    let ckpt_path = out_ckpt.map_or_else(|| dir.join("model.ckpt"), Path::to_path_buf);
    trainer.snapshot().save(&ckpt_path)?;
    let trace = write_output(&dir, "trace.csv", |w| write_trace_csv(w, trainer.trace()))?;
    let mut info = RunInfo::new("train", config);
    info.outputs = vec![ckpt_path.display().to_string(), trace.display().to_string()];
    println!(
        "trained {} steps, final loss {:.4}; checkpoint {}",
        trainer.steps_done(),
        cddm::train::smoothed_loss(trainer.trace(), 100),
        ckpt_path.display()
    );
    finish(&dir, info, config, started)
}

fn cmd_sample(
    config: &ExperimentConfig,
    net: &cddm::Denoiser,
    mut info: RunInfo,
    dir: &Path,
) -> Result<(), Error> {
    let started = Instant::now();
    let snr = config.channel.snr_db[0];
    if config.channel.snr_db.len() > 1 {
        log::warn!("sample uses only the first SNR ({snr} dB)");
    }
    let rows = experiment::run_sample(config, net, snr)?;
    let path = write_output(dir, "samples.csv", |w| experiment::write_samples_csv(w, &rows))?;
    info.command = "sample".into();
    info.outputs = vec![path.display().to_string()];
    println!("wrote {} ({} rows)", path.display(), rows.len());
    finish(dir, info, config, started)
}

fn cmd_mse_bench(
    config: &ExperimentConfig,
    net: &cddm::Denoiser,
    mut info: RunInfo,
    dir: &Path,
) -> Result<(), Error> {
    let started = Instant::now();
    let records = experiment::run_mse_experiment(config, net)?;
    let path = write_output(dir, "metrics.csv", |w| write_metrics_csv(w, &records))?;
    for r in &records {
        println!(
            "{} snr {:>5.1} dB  sigma_h {:.3}  m {:>3}  mse {:.3e} -> {:.3e}  gain {:+.2} dB",
            r.channel, r.snr_db, r.sigma_h, r.m, r.mse_without_cddm, r.mse_with_cddm, r.gain_db
        );
    }
    info.command = "mse-bench".into();
    info.outputs = vec![path.display().to_string()];
    info.grid_wall_time_s = records.iter().map(|r| r.wall_time_s).collect();
    finish(dir, info, config, started)
}

fn cmd_entropy(
    config: &ExperimentConfig,
    net: &cddm::Denoiser,
    mut info: RunInfo,
    dir: &Path,
) -> Result<(), Error> {
    let started = Instant::now();
    let (report, rec) = experiment::run_entropy_experiment(config, net)?;
    let path = write_output(dir, "entropy.csv", |w| write_report_csv(w, &report))?;
    println!("recommended t_max: {}", rec.t_max);
    if let Some(w) = &rec.warning {
        eprintln!("warning: {w}");
    }
    info.command = "entropy-report".into();
    info.outputs = vec![path.display().to_string()];
    info.recommended_t_max = Some(rec.t_max);
    info.warning = rec.warning;
    finish(dir, info, config, started)
}

fn cmd_inspect(path: &Path) -> Result<(), Error> {
    let c = Checkpoint::load(path)?;
    let a = &c.architecture;
    let s = &c.schedule;
    println!("checkpoint: {}", path.display());
    println!("format version: {}", cddm::nn::FORMAT_VERSION);
    println!(
        "architecture: signal_dim {} hidden {} blocks {} embed_dim {} ({} parameters)",
        a.signal_dim,
        a.hidden,
        a.blocks,
        a.embed_dim,
        a.param_count()
    );
    println!(
        "schedule: T {} alpha {}..{} t_max {}",
        s.steps, s.alpha_first, s.alpha_last, s.t_max
    );
    println!("training steps: {}", c.optimizer.step);
    println!("config hash: {:016x}", c.config_hash);
    println!("corpus cursor: {}", c.corpus_cursor);
    println!("training config:");
    for line in c.config_toml.lines() {
        println!("  {line}");
    }
    Ok(())
}
