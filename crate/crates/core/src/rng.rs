//! Named random streams.
//!
//! Every random draw in a run comes from a stream derived from the root seed
//! and a purpose label, so adding a new consumer never shifts the draws seen
//! by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive an independent generator for `(root_seed, label)`.
pub fn stream(root_seed: u64, label: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
