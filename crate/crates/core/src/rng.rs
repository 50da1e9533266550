//! Deterministic, splittable random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream derived from a
//! master seed plus a stream key, so generation is reproducible and
//! independent of iteration order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep unrelated streams (subject draws, censoring, replicate
/// seeds, optimizer restarts) from colliding on the same key.
pub const TAG_SUBJECT: u64 = 0x5347;
pub const TAG_CENSOR: u64 = 0x434e;
pub const TAG_REPLICATE: u64 = 0x5250;
pub const TAG_RESTART: u64 = 0x5253;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with a (tag, index) pair into a child seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag ^ splitmix64(index)))
}

/// ChaCha8 stream for a derived seed.
pub fn stream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Stable FNV-1a hash of a string, used to key per-subject censoring streams
/// off the subject identifier rather than its position in the dataset.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
