//! Keyed random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(seed, tag, index)`, so a draw never depends on how many other draws
//! happened before it or on which thread performed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but fixed: changing them changes every
/// simulated dataset.
pub mod tag {
    pub const WORKER_TYPE: u64 = 0x7779_7065;
    pub const FIRM_TYPE: u64 = 0x6679_7065;
    pub const THETA: u64 = 0x7468_6574;
    pub const EDGES: u64 = 0x6564_6765;
    pub const WORKER_EFFECT: u64 = 0x776d_7565;
    pub const FIRM_EFFECT: u64 = 0x6670_6869;
    pub const RESIDUAL: u64 = 0x7265_7369;
    pub const REPLICATION: u64 = 0x7265_706c;
    pub const PROBE: u64 = 0x7072_6f62;
    pub const TEST_NETWORK: u64 = 0x7465_7374;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}
