//! Deterministic seed derivation.
//!
//! Every stochastic component draws from its own stream derived from the run
//! seed and a structural path (iteration, lead index, rollout index, ...).
//! Streams are independent of execution order, so parallel and sequential
//! runs produce identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer. Used both for seed derivation and for the stable
/// structural hashing in `chemgraph`.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Fold `value` into an accumulated hash state.
pub fn combine(state: u64, value: u64) -> u64 {
    mix64(state ^ mix64(value))
}

/// Derive a child seed from a root seed, a stream tag, and structural indices.
pub fn derive_seed(root: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = mix64(root);
    for b in tag.bytes() {
        h = combine(h, u64::from(b));
    }
    for &i in indices {
        h = combine(h, i);
    }
    h
}

/// A seeded RNG for the given stream.
pub fn stream_rng(root: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, indices))
}
