//! Seeded, replayable random number streams.
//!
//! Every stochastic choice in the crate (weight init, shuffling, crops,
//! augmentation, noise injection) draws from an [`RngState`]. Streams are
//! derived from a master seed plus a list of integer labels, so any point of
//! the pipeline can be re-created without replaying everything before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A deterministic random stream: identical seed ⇒ identical samples.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream from `seed` and a label path.
    ///
    /// The same `(seed, lane)` pair always yields the same stream; distinct
    /// lanes are decorrelated by a SplitMix64 hash chain.
    pub fn derive(seed: u64, lane: &[u64]) -> Self {
        Self::new(derive_seed(seed, lane))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream position, for exact save/restore.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn restore(seed: u64, word_pos: u128) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(word_pos);
        Self { seed, rng }
    }

    /// One standard normal sample.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn flip(&mut self) -> bool {
        self.rng.random::<bool>()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Deterministic seed mixing for derived streams.
pub fn derive_seed(seed: u64, lane: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &label in lane {
        s = splitmix64(s ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    s
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
