//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`.
//! Child seeds are derived from a parent seed and a stream index with
//! SplitMix64:
//!
//! ```text
//! derive_seed(parent, stream) = splitmix64(parent + (stream + 1) * 0x9E3779B97F4A7C15)
//! ```
//!
//! (wrapping arithmetic). The formula is part of the model document
//! contract: forest members and T-learner sides record which derived seed
//! they were fit with.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Fixed stream indices so that call sites never collide.
pub mod stream {
    pub const CONTROL_SIDE: u64 = 0;
    pub const INDIVIDUAL_SIDE: u64 = 1;
    pub const DATA: u64 = 2;
    pub const HOLDOUT: u64 = 3;
    /// Forest member `i` uses `MEMBER_BASE + i`.
    pub const MEMBER_BASE: u64 = 1 << 32;
    /// Forest subsample for member `i` uses `SUBSAMPLE_BASE + i`.
    pub const SUBSAMPLE_BASE: u64 = 1 << 33;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
