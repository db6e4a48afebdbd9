//! Named seed substreams.
//!
//! Every random decision in the pipeline draws from an RNG seeded through
//! [`derive`], so a single config seed fans out into independent,
//! label-addressed streams and nothing depends on ambient entropy.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from a base seed and a stream label.
pub fn derive(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// RNG for a named substream.
pub fn rng(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, label))
}
