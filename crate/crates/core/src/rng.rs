//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! keyed by a 64-bit seed, and per-sample seeds are hashed from a run seed plus
//! stream identifiers so results do not depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with any number of stream identifiers.
pub fn derive_seed(seed: u64, streams: &[u64]) -> u64 {
    streams
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s.wrapping_add(0xD1B5_4A32_D192_ED03))))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tags for the independent random streams of one sample.
pub mod stream {
    pub const AUGMENT: u64 = 1;
    pub const WINDOWS: u64 = 2;
    pub const MASK: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const SCENE: u64 = 6;
    pub const SPECKLE: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const PROBE: u64 = 9;
    pub const SUBSET: u64 = 10;
    pub const SAMPLE: u64 = 11;
}
