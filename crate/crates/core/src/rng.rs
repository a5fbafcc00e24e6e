//! Seeded, portable randomness.
//!
//! All stochastic choices in the crate draw from a [`SeededRng`]. The
//! generator is ChaCha20 keyed from a 64-bit seed, so a given seed yields the
//! same stream on every platform. Independent sessions derived from one base
//! seed use distinct ChaCha streams rather than reseeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Generator for session `session` under base seed `seed`.
    ///
    /// Sessions share the key but read disjoint ChaCha streams, so draws are
    /// independent and the mapping is stable across runs.
    pub fn for_session(seed: u64, session: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(session);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen::<u64>()
    }
}
