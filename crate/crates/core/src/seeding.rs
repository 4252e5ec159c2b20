//! Deterministic sub-seed derivation.
//!
//! Every run hangs off a single user-facing seed. Components that need their
//! own random stream (head init, per-epoch shuffles, pairing, synthetic
//! sampling, map layout, ...) derive a sub-seed by hashing the root seed
//! together with a fixed label and an index. Two streams never collide unless
//! their labels collide, and reordering unrelated work cannot shift anyone's
//! randomness.

use sha2::{Digest, Sha256};

/// Derives a 64-bit sub-seed from `root` for the stream `label`/`index`.
///
/// The derivation is SHA-256 over `root || label || index` (integers little
/// endian), truncated to the first eight bytes. It is stable across platforms
/// and releases; cached artifacts and training trajectories depend on it.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
