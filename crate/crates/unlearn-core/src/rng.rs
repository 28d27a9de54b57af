//! Seed derivation. All randomness in the crate flows from explicit seeds
//! through these helpers; there is no global RNG anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed, a purpose tag and
/// two counters (typically epoch and step/sample).
pub fn derive_seed(base: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(base);
    for &byte in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(byte));
    }
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

/// ChaCha8 stream for a derived seed.
pub fn rng_for(base: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "init", 0, 0), derive_seed(7, "init", 0, 0));
        assert_ne!(derive_seed(7, "init", 0, 0), derive_seed(7, "shuffle", 0, 0));
        assert_ne!(derive_seed(7, "init", 0, 0), derive_seed(7, "init", 1, 0));
        assert_ne!(derive_seed(7, "init", 0, 0), derive_seed(8, "init", 0, 0));
    }
}
