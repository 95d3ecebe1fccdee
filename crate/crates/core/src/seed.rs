//! Seed derivation. Every random choice in the crate is a pure function of a
//! user seed and a fixed stream tag, so runs can be replayed from any point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_SPLIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;
pub(crate) const STREAM_MASK: u64 = 3;
pub(crate) const STREAM_GENERATOR: u64 = 4;
pub(crate) const STREAM_DISCRIMINATOR: u64 = 5;
pub(crate) const STREAM_SYNTH: u64 = 6;

/// SplitMix64 finalizer over `seed` and `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
