//! Reproducible random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, path index, purpose tag)`. ChaCha is counter based, so a path's
//! draws never depend on which thread produced them or on how many other
//! paths were simulated before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Values below [`TAG_FBM_BASE`] are reserved for scalar uses,
/// fBm components occupy `TAG_FBM_BASE + component`.
pub const TAG_BM: u64 = 1;
pub const TAG_MEASURE: u64 = 2;
pub const TAG_FEYNMAN_KAC: u64 = 3;
pub const TAG_LIMIT_BM: u64 = 4;
pub const TAG_FAST_RESCALED: u64 = 5;
pub const TAG_AUX: u64 = 6;
pub const TAG_FBM_BASE: u64 = 64;

pub const TAGS_PER_PATH: u64 = 4096;

/// Stream for `path` and `tag` under `seed`.
pub fn stream(seed: u64, path: u64, tag: u64) -> ChaCha8Rng {
    debug_assert!(tag < TAGS_PER_PATH);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path.wrapping_mul(TAGS_PER_PATH).wrapping_add(tag));
    rng
}

/// Derives an independent seed for a sub-experiment, e.g. one ladder level.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
