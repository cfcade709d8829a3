//! Keyed deterministic random streams.
//!
//! Every consumer derives its own stream from `(seed, key...)`, so sampling
//! for step `k` never depends on what ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn keyed_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for k in keys {
        h.update(k.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Short hex digest of a byte string.
pub fn hex_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
