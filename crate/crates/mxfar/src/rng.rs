//! Deterministic RNG substreams.
//!
//! All randomness in the toolkit flows from a single `u64` seed. Independent
//! tasks (subjects, bootstrap replicates, null-model edges) each derive their
//! own ChaCha stream from `(seed, tag, index)`, so parallel execution order
//! cannot change the numbers drawn.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per independent consumer of randomness.
pub mod tag {
    pub const SIMULATE_EFFECTS: u64 = 1;
    pub const SIMULATE_NOISE: u64 = 2;
    pub const NONLINEARITY: u64 = 3;
    pub const BANDS: u64 = 4;
    pub const EDGE_NULL: u64 = 5;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a reproducible substream for `(seed, tag, index)`.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}
