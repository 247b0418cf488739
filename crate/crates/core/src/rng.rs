//! Seed plumbing. Every stochastic step derives its own stream from the
//! top-level seed so that loops stay reproducible regardless of how much
//! randomness earlier steps consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of stream identifiers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags so unrelated consumers never collide.
pub mod stream {
    pub const CANDIDATES: u64 = 0xC4D1;
    pub const RESTARTS: u64 = 0x4E57;
    pub const FOLDS: u64 = 0xF01D;
    pub const PHANTOM: u64 = 0xFA47;
    pub const SYNTHETIC: u64 = 0x5E7A;
    pub const REPORT: u64 = 0x8E90;
}
