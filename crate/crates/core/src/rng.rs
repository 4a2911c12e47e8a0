//! Seed derivation. Every random draw in the crate comes from a ChaCha
//! stream keyed by the master seed plus a tuple of tags, so results do not
//! depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream domains; kept distinct so e.g. head initialization never reuses
/// the perturbation stream of some step.
pub mod domain {
    pub const TRUNK_INIT: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const GATE_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const DATA: u64 = 6;
    pub const SPLIT: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `seed` and `tags` into a single 64-bit key.
pub fn derive_key(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, tags))
}
