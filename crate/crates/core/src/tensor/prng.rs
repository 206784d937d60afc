//! Seeded randomness. Everything stochastic in this crate (weight init,
//! dropout masks, data synthesis) flows through [`Prng`], so a run is a pure
//! function of its seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic generator: ChaCha8 keyed by a 64-bit seed. The ChaCha
/// stream is specified independently of platform, so identical seeds give
/// identical output streams everywhere.
#[derive(Clone, Debug)]
pub struct Prng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in the inclusive range [lo, hi].
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        self.rng.random_range(lo..=hi)
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.random_range(0..n)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Derive an independent per-item seed from a master seed, a stream tag and
/// an item index. SplitMix64 finalizers make nearby (tag, index) pairs
/// statistically unrelated, so items can be generated in parallel or in any
/// order with identical results.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = splitmix64(master ^ splitmix64(tag));
    z = splitmix64(z ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags for [`derive_seed`], one per independent consumer of the
/// master seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const BANK: u64 = 2;
    pub const TEST: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const DATASET: u64 = 6;
}
