//! Named random sub-streams derived from one user-visible seed.
//!
//! Weights, variation factors, input bits and fold assignments each draw from
//! their own stream so any one of them can be held fixed while another varies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const WEIGHTS: &str = "weights";
pub const VARIATION: &str = "variation";
pub const INPUT: &str = "input";
pub const FOLDS: &str = "folds";
pub const SYNTHETIC: &str = "synthetic";

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
