//! Seed hierarchy.
//!
//! A root seed and a list of tags map to an independent ChaCha stream, so
//! e.g. changing the batch size never perturbs the initialisation stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically mix a root seed with a path of tags.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(root);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    s
}

pub fn rng_from(root: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tags))
}

/// Stream tags used across the crate.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const PREDICT: u64 = 4;
    pub const COVARIANCE: u64 = 5;
    pub const TOY_LATENT: u64 = 6;
    pub const TOY_NOISE: u64 = 7;
    pub const BATCH: u64 = 8;
    /// RFF bases when they are held fixed for a whole run.
    pub const BASIS: u64 = 9;
}
