//! Seed derivation for reproducible, independently-streamed randomness.
//!
//! Every stochastic operation in this crate takes an explicit seed. Nested
//! work (per node, per test case, per Shapley subset) derives child seeds
//! from the parent seed plus a path of integers, so concurrent or reordered
//! evaluation cannot perturb results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a path of stream identifiers.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &p in path {
        acc = mix(acc ^ p.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    acc
}

/// A deterministic RNG for the given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng(derive(base, path))`.
pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(base, path))
}
