//! Stable hashing and seeded RNG construction.
//!
//! `std`'s hasher is not stable across releases, so all derived seeds go
//! through SHA-256.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// First 8 bytes (little endian) of SHA-256 over the length-prefixed parts.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Per-item seed derived from a root seed and a label, e.g. a scenario id.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    stable_hash(&[&root.to_le_bytes(), label.as_bytes()])
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex SHA-256 digest of arbitrary bytes.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
