//! Seeded random streams.
//!
//! Every sampler takes an explicit `&mut R: Rng`. Independent substreams are
//! derived from a `(seed, stream)` pair so parallel replicates never share
//! state and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// A generator seeded from `seed`.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Substream `index` of `seed`. Distinct indices give non-overlapping streams.
pub fn substream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a few floats into a seed, for oracles whose seed must be a pure
/// function of their inputs.
pub(crate) fn seed_from_values(values: &[f64]) -> u64 {
    // splitmix64 over the raw bits
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
