//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit [`Stream`]. Streams are
//! ChaCha8 instances addressed by `(seed, stream id)`, so independent tasks get
//! non-overlapping sequences and any run replays bit-exactly from its seed.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Stream ids used by the library. No two subsystems share one.
pub mod ids {
    pub const TRAIN: u64 = 1;
    pub const INIT: u64 = 2;
    pub const MSE_BENCH: u64 = 0x100;
    pub const ENTROPY: u64 = 0x200;
    pub const SAMPLE_CLI: u64 = 0x300;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derive a sub-stream id for grid point `index` of task `base`.
pub fn substream(base: u64, index: u64) -> u64 {
    (base << 32) | (index & 0xffff_ffff)
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}
