//! Named sub-seed derivation.
//!
//! Every source of randomness is keyed by the global seed plus a stable name
//! (`"corpus"`, `"split"`, `"init"`, `"batch"`, `"eval"`, ...), so one stream
//! can change without disturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed from a parent seed and a stream name.
pub fn derive(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(name)))
}

/// Derive a sub-seed from a parent seed, a stream name and integer indices.
pub fn derive_indexed(seed: u64, name: &str, idx: &[u64]) -> u64 {
    idx.iter().fold(derive(seed, name), |acc, &i| {
        splitmix64(acc ^ splitmix64(i))
    })
}

pub fn rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, name))
}

pub fn rng_indexed(seed: u64, name: &str, idx: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, name, idx))
}
