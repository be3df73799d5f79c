//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a stream tag into an independent child seed.
pub fn derive(parent: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Tags for the named random streams of one experiment run.
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const SFT_DATA: u64 = 2;
    pub const PREF_DATA: u64 = 3;
    pub const SFT_SHUFFLE: u64 = 4;
    pub const PREF_SHUFFLE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const REWARD: u64 = 7;
    pub const SWEEP_CELL: u64 = 8;
}
