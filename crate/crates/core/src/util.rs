//! Seed derivation and content hashing shared by every randomized or
//! persisted computation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Stable sub-seed for `(seed, purpose)`; independent streams never share
/// state, so parallel workers stay reproducible.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

pub fn rng_for(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON encoding of `v`.
pub fn config_hash<T: Serialize>(v: &T) -> String {
    let text = serde_json::to_vec(v).expect("config types serialize infallibly");
    sha256_hex(&text)
}
