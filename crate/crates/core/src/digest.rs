//! Content hashes and deterministic RNG stream derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn hash64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

/// 16 lowercase hex digits of the SHA-256 of `bytes`.
pub fn hex_id(bytes: &[u8]) -> String {
    format!("{:016x}", hash64(bytes))
}

/// An independent RNG stream for `(seed, domain, a, b)`; used so that every
/// step and every prompt draws from its own stream regardless of scheduling.
pub fn stream_rng(seed: u64, domain: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let d = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&d[..32]);
    ChaCha8Rng::from_seed(s)
}
