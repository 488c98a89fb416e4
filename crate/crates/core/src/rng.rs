//! Counter-style keyed random streams.
//!
//! Every random draw in the engine comes from a generator keyed by
//! `(seed, tag, row)`, so any stage and any row can be regenerated in
//! isolation and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per consumer of randomness.
pub mod tag {
    pub const MASK: u64 = 0x6d61_736b;
    pub const PARTNER: u64 = 0x7061_7274;
    pub const FORWARD: u64 = 0x6677_6464;
    pub const SAMPLER: u64 = 0x7361_6d70;
    pub const GMM: u64 = 0x676d_6d00;
    pub const DECODER: u64 = 0x6465_636f;
    pub const PRIOR: u64 = 0x7072_696f;
}

/// Generator for row `row` of the stream `(seed, tag)`.
pub fn keyed(seed: u64, tag: u64, row: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&row.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, used when one experiment needs several independent
/// streams under the same tag.
pub fn derive(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
