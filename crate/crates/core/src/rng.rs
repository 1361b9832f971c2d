//! Seedable deterministic random generator.
//!
//! The stream generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`, whose output is specified independently of
//! platform and endianness. Derived generators are keyed by a SplitMix64 mix
//! of `(seed, index)`:
//!
//! ```text
//! child_seed = splitmix64(seed ^ splitmix64(index + 0x9E3779B97F4A7C15))
//! splitmix64(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!                z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//!                z ^ (z >> 31)
//! ```
//!
//! The mix is a bijection in `index` for a fixed seed, so distinct indices
//! always produce distinct child seeds.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent generator; a pure function of `(seed, index)`
    /// regardless of how much of this stream has been consumed.
    pub fn split(&self, index: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA))))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Raw 64-bit draw.
    pub fn word(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn bit(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    /// `len` independent flags, each true with probability `1 - rate`.
    ///
    /// Each flag consumes one 32-bit draw `u` and is true iff
    /// `u >= round(rate * 2^32)`.
    pub fn keep_mask(&mut self, len: usize, rate: f64) -> Vec<bool> {
        let threshold = (rate.clamp(0.0, 1.0) * 4_294_967_296.0).round() as u64;
        let mut words = vec![0u32; len];
        self.inner.fill(&mut words[..]);
        words.into_iter().map(|u| u as u64 >= threshold).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
