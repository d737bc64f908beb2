//! Seed derivation. Every random stream is keyed by a master seed plus a
//! path of indices, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `seed`; distinct paths give unrelated seeds.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from_seed(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, path: &[u64]) -> LabRng {
    rng_from_seed(derive_seed(seed, path))
}

/// Stream tags so unrelated consumers of the same master seed never collide.
pub mod stream {
    pub const AUX: u64 = 0xA0;
    pub const FORWARD: u64 = 0xF0;
    pub const PRIOR: u64 = 0x50;
    pub const REVERSE: u64 = 0x5E;
    pub const LOSS: u64 = 0x10;
    pub const DATA: u64 = 0xDA;
    pub const HELD_OUT: u64 = 0xDB;
}
