//! Counter-based seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! a pure function of the master seed and an index path, so results do not
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of one master seed apart.
pub(crate) mod stream {
    pub const FREQUENCY: u64 = 1;
    pub const STRATIFIED: u64 = 2;
    pub const INIT: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const NEGFRAC: u64 = 7;
    pub const CONSISTENCY: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with an index path into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// ChaCha8 generator for the given master seed and index path.
pub fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
