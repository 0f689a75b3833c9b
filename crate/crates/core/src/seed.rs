//! Named seed streams.
//!
//! Every source of randomness in the stack draws from a single 64-bit root
//! seed through a named stream splitter, so a run is fully determined by
//! (root seed, stream name, index). Stream derivation hashes the triple;
//! distinct names or indices give statistically independent streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives the 64-bit seed of stream `name[index]` under `root`.
pub fn stream_seed(root: u64, name: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seeded generator for stream `name[index]`.
pub fn stream_rng(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, name, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic() {
        assert_eq!(stream_seed(7, "env", 42), stream_seed(7, "env", 42));
        let a: f64 = stream_rng(7, "env", 42).gen();
        let b: f64 = stream_rng(7, "env", 42).gen();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_distinct() {
        assert_ne!(stream_seed(7, "env", 0), stream_seed(7, "eval", 0));
        assert_ne!(stream_seed(7, "env", 0), stream_seed(7, "env", 1));
        assert_ne!(stream_seed(7, "env", 0), stream_seed(8, "env", 0));
    }

    #[test]
    fn name_boundaries_do_not_collide() {
        // "ab"[1] and "a"[?] must never alias regardless of index bytes.
        assert_ne!(stream_seed(7, "ab", 0), stream_seed(7, "a", 0x62));
    }
}
