//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (`rand_chacha`), keyed
//! with `ChaCha20Rng::seed_from_u64(seed)`. Independent streams are selected
//! with `set_stream`, where the stream number is either an explicit index or
//! the first eight bytes (little-endian) of SHA-256 over a text label.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Recorded in artifacts so a run can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64, stream=sha256(label)[0..8] LE)";

pub type Rng = ChaCha20Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream keyed by a label, stable across reorderings of the labelled items.
pub fn labelled(seed: u64, label: &str) -> Rng {
    stream(seed, label_hash(label))
}

pub fn label_hash(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
