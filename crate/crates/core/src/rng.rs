//! Seeded pseudorandom source shared by every stochastic operation.
//!
//! Backed by ChaCha8, whose output stream is fixed by its specification and
//! therefore identical on every platform. Normal draws use the ziggurat
//! sampler from `rand_distr`.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Draws a base seed for a family of per-item streams. Item `i` of the
    /// family uses `Rng::seeded(base.wrapping_add(i))`, so results do not
    /// depend on how the items are scheduled across workers.
    pub fn fork_base(&mut self) -> u64 {
        self.next_u64()
    }

    pub fn stream(base: u64, index: usize) -> Self {
        Self::seeded(base.wrapping_add(index as u64))
    }
}
