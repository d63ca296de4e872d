//! Deterministic seed derivation.
//!
//! Every random choice in the lab flows from one master seed. Child seeds are
//! a keyed hash of `(master seed, stage name, index)`, so any stage can be
//! re-run in isolation and reproduce exactly the same stream it saw inside a
//! full run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `(master, stage, index)`.
///
/// The derivation is a SHA-256 hash truncated to 64 bits, so child streams
/// for different stages or indices are statistically independent.
pub fn child_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"bnnlab.seed.v1");
    h.update(master.to_le_bytes());
    h.update([0u8]);
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Standard RNG used across the crate, seeded deterministically.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// RNG for `(master, stage, index)` in one call.
pub fn stage_rng(master: u64, stage: &str, index: u64) -> ChaCha12Rng {
    rng_from_seed(child_seed(master, stage, index))
}
