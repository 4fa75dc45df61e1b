//! Deterministic seed derivation.
//!
//! Every randomized stage of the pipeline (message generation, weight init,
//! batch shuffling, subset search, augmentation, ...) draws from its own RNG,
//! seeded by hashing the global seed together with a stage name. Runs are
//! reproducible for a fixed global seed, and changing one stage's draw count
//! never shifts another stage's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `global` and a stage label.
///
/// The derivation is `sha256(global_le || 0x1f || stage)` truncated to the
/// first 8 bytes (little-endian). The separator byte keeps `(1, "ab")` and
/// a hypothetical seed/stage concatenation collision apart.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields >= 8 bytes"))
}

/// RNG for a named stage under a global seed.
pub fn stage_rng(global: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, stage))
}
