//! Seed derivation shared by every randomized component.
//!
//! A child seed is `splitmix64(base ^ splitmix64(stream))`, where `stream`
//! identifies the consumer (tree index, trial index, fold, ...). Children of
//! distinct streams are decorrelated, and the scheme does not depend on the
//! order in which children are created, so work can be split across threads
//! without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Derive along a path of streams, e.g. `[position, trial]`.
pub fn derive_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |s, p| derive(s, *p))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
