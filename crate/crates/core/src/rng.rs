//! Named, splittable random streams.
//!
//! Every source of randomness in a run is derived from one of four base
//! seeds (data, noise, bandit ties, k-means) plus a purpose tag and
//! optional indices. Identical seeds therefore reproduce identical runs
//! regardless of evaluation order, and ablations can vary one stream at
//! a time.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags keeping derived streams disjoint.
pub mod tags {
    pub const TASK: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const PROFILE: u64 = 6;
    pub const TIME_NOISE: u64 = 7;
    pub const KMEANS: u64 = 8;
    pub const REFINE: u64 = 9;
    pub const EVAL: u64 = 10;
    pub const LABELS: u64 = 11;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a deterministic RNG from a base seed and a tag path.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = splitmix64(seed);
    for &tag in path {
        state = splitmix64(state ^ splitmix64(tag));
    }
    ChaCha12Rng::seed_from_u64(state)
}
