//! Seed derivation and random streams.
//!
//! Every random quantity in the crate is drawn from a stream keyed on an
//! explicit `(seed, keys...)` tuple, so results never depend on which worker
//! thread happens to run a task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stage tags used when splitting a seed.
pub mod stage {
    pub const SURFACE: u64 = 1;
    pub const PATH: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const DETECTION: u64 = 4;
    pub const REPLICATION: u64 = 5;
    pub const LEARNING: u64 = 6;
    pub const ONLINE: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of keys.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(seed: u64, keys: &[u64]) -> Stream {
    stream(derive_seed(seed, keys))
}
