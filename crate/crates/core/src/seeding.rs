//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(master seed, domain, index)`. Streams are independent of evaluation
//! order, so parallel work partitioned in any way reproduces the same values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Domain tags separating the streams used by different modules.
pub mod domain {
    pub const MAP_PERTURBATION: u64 = 0x6d61_7073;
    pub const PREIMAGE_PATHS: u64 = 0x7061_7468;
    pub const MEASURE: u64 = 0x6d65_6173;
    pub const ORBITS: u64 = 0x6f72_6269;
    pub const CENTERING: u64 = 0x6365_6e74;
    pub const TRANSFER: u64 = 0x7472_6e73;
    pub const HOLDER: u64 = 0x686f_6c64;
    pub const MARTINGALE: u64 = 0x6d61_7274;
    pub const SYNTHETIC: u64 = 0x7379_6e74;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derived 64-bit key for `(master, domain, index)`.
pub fn derive(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ domain) ^ index)
}

/// Independent stream for one work item.
pub fn stream(master: u64, domain: u64, index: u64) -> Stream {
    let key = derive(master, domain, index);
    let mut seed = [0u8; 32];
    for (k, chunk) in seed.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key ^ (k as u64).wrapping_mul(0xa076_1d64_78bd_642f)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Child seed for a nested computation (e.g. one repetition of an experiment).
pub fn child_seed(master: u64, domain: u64, index: u64) -> u64 {
    derive(master, domain ^ 0x5eed, index)
}
