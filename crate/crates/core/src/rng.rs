//! Deterministic random streams.
//!
//! Every run draws from ChaCha8 streams keyed by the run seed. Optimization
//! draws use stream 0; measurement draws at iteration `t` use their own
//! streams so that measuring never perturbs the optimization trajectory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SviRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SviRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> SviRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const OPTIMIZATION_STREAM: u64 = 0;

/// Stream for the ELBO measurement at iteration `iter`.
pub(crate) fn elbo_stream(iter: usize) -> u64 {
    ((iter as u64) << 20) | 1
}

/// Stream for the `j`-th variance-measurement invocation at iteration `iter`.
pub(crate) fn variance_stream(iter: usize, j: usize) -> u64 {
    ((iter as u64) << 20) | (2 + j as u64)
}
