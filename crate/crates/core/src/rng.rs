//! Named random substreams.
//!
//! Every random draw in a run descends from one 64-bit seed. Components
//! derive their own stream from the seed plus a label path (for example
//! `["policy", "epoch-1", "train-000042"]`) so that each can be replayed in
//! isolation and none perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Derives a 64-bit child seed from `seed` and a label path.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Opens the substream named by `labels` under `seed`.
pub fn substream(seed: u64, labels: &[&str]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, labels))
}
