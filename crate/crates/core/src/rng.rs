//! Seed derivation for independent, schedule-free random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn id_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Mixes a base seed, a stream tag and any number of stream coordinates.
pub fn stream_seed(seed: u64, tag: &str, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed ^ id_hash(tag)), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream(seed: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag, parts))
}
