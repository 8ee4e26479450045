//! The noise estimator `ε_θ`, its optimizer, and the checkpoint container.

mod checkpoint;
mod denoiser;
mod embedding;
mod optim;

pub use checkpoint::{config_hash, Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use denoiser::{loss_cddm, Architecture, Batch, Denoiser};
pub use embedding::timestep_embedding;
pub use optim::{Adam, LrSchedule};
