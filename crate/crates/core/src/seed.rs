//! Stage-tagged seed derivation. One global seed fans out to every random
//! decision in the pipeline.

/// FNV-1a over bytes. Stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive an independent seed for a named stage.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(tag.as_bytes())))
}

/// Derive a seed for the `index`-th repetition of a stage (epoch, fold, row).
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, tag) ^ splitmix64(index.wrapping_add(1)))
}
