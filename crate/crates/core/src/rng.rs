//! Random number sources.
//!
//! Every stochastic component draws from [`ChaCha8Rng`] seeded with a
//! 64-bit value. ChaCha8 output is value-stable across `rand_chacha`
//! releases, so trajectories, shuffles and initializations reproduce
//! across builds.
//!
//! Child seeds are derived from a parent seed and a stream tag with one
//! round of SplitMix64 over `parent ^ (tag * GOLDEN)`. Tags are small
//! fixed constants (see [`stream`]) or model/batch indices.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed for stream `tag`.
pub fn derive(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ tag.wrapping_mul(GOLDEN))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags used when deriving seeds from a run's master seed.
pub mod stream {
    pub const TRAIN_ENV: u64 = 1;
    pub const TRAIN_POLICY: u64 = 2;
    pub const EVAL_ENV: u64 = 3;
    pub const EVAL_POLICY: u64 = 4;
    pub const ORIGINAL_ENSEMBLE: u64 = 5;
    pub const ANALYSIS_SHUFFLE: u64 = 7;
    pub const BASELINE_ANALYSIS_SHUFFLE: u64 = 8;

    // per-model streams, below a model seed
    pub const INIT: u64 = 101;
    pub const BATCH_ORDER: u64 = 102;
    pub const DROPOUT: u64 = 103;
    pub const ACTION_SHUFFLE: u64 = 104;
}
