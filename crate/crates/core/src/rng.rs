//! Seed derivation for independent, reproducible random streams.
//!
//! Every consumer of randomness (network init, misreport initialization,
//! gradient noise, profile sampling) draws from its own ChaCha stream whose
//! seed is a hash of a base seed and a list of tags such as
//! `(purpose, step, bidder)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const TAG_INIT: u64 = 0x1;
pub const TAG_MISREPORT: u64 = 0x2;
pub const TAG_NOISE: u64 = 0x3;
pub const TAG_PROFILE: u64 = 0x4;
pub const TAG_SAMPLE: u64 = 0x5;
pub const TAG_AUCTION: u64 = 0x6;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes `tags` into `base`. Order matters.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, tags))
}
