//! Channel denoising diffusion models.
//!
//! A transmitted real block `x ∈ R^{2k}` crosses an AWGN or Rayleigh
//! block-fading channel, is MMSE-equalized and rescaled to `y_r`, and a
//! diffusion denoiser trained on a channel-matched forward process strips the
//! residual noise with a short deterministic reverse chain.
//!
//! Module map:
//! - [`channel`]: complex mapping, power normalization, channel draws
//! - [`equalizer`]: MMSE weights, equalization, conditional moments of `y_r`
//! - [`schedule`]: noise schedule, forward diffusion, choice of `m`
//! - [`nn`]: the noise estimator, Adam, checkpoints
//! - [`train`] / [`sample`]: training loop and reverse sampler
//! - [`entropy`]: Monte Carlo check of the entropy-reduction condition
//! - [`source`]: synthetic latent sources
//! - [`experiment`]: MSE and entropy experiment harness with CSV output

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod entropy;
pub mod equalizer;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod source;
pub mod train;

pub use channel::{
    ChannelMode, ChannelRealization, ComplexSymbolBlock, Fading, RealSignalBlock,
};
pub use equalizer::EqualizedObservation;
pub use error::{Error, Result};
pub use nn::{Architecture, Checkpoint, Denoiser};
pub use schedule::{DiffusionSchedule, MSelection, ScheduleParams};
pub use source::SourceKind;
pub use train::{TrainConfig, Trainer};
