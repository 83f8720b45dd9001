//! Seed derivation helpers.
//!
//! Every parallel phase derives one child seed per work item from a master
//! seed and the item's ordinal, so results never depend on scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap seed mixing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a stream label.
pub fn derive_seed(master: u64, label: &str, ordinal: u64) -> u64 {
    let mut h = mix64(master);
    for &b in label.as_bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ ordinal)
}

/// Deterministic RNG for a derived stream.
pub fn stream_rng(master: u64, label: &str, ordinal: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, ordinal))
}
