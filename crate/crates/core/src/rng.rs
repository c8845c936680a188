//! Counter-based seed derivation.
//!
//! Every random stream is a pure function of `(master_seed, index, stream)`,
//! so generation order and thread count never change the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Stream tags for the per-sample streams.
pub const TOPOLOGY_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;
pub const SHOTS_STREAM: u64 = 2;
pub const SPLIT_STREAM: u64 = 0x5350_4c49_54;
pub const PRESET_STREAM: u64 = 0x5052_4553_4554;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with an index and a stream tag.
pub fn derive_seed(master: u64, index: u64, stream: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    splitmix64(b ^ stream.wrapping_mul(0xA24B_AED4_963E_E407))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
