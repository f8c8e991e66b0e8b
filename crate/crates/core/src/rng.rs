//! Seeded random streams.
//!
//! Every stochastic operation draws from a ChaCha8 stream built from an
//! explicit `u64` seed, so a seed fully determines its output independent of
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fills a fresh vector with unit Gaussian draws.
pub fn gaussian_vec(rng: &mut StreamRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
