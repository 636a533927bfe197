//! Deterministic sampling primitives shared by the mixture builder and task
//! generation: stable hashing, seeded RNGs and fraction subsets.
//!
//! Two modes. Hash-based inclusion streams row-by-row and hits the requested
//! fraction only in expectation; count-exact shuffles the full index range
//! with a seeded RNG and takes exactly `round(n * fraction)` rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Shuffle-take: realized counts match `round(n * fraction)` exactly.
    #[default]
    CountExact,
    /// Per-row hash inclusion: streaming, approximate counts.
    HashBased,
}

/// Platform-stable 64-bit hash of a seed plus a string key.
pub fn stable_hash64(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Hash-mode inclusion test: keeps a `fraction` share of keys in expectation.
pub fn included_by_hash(seed: u64, key: &str, fraction: f64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    if fraction <= 0.0 {
        return false;
    }
    let threshold = (fraction * 2f64.powi(64)) as u128;
    u128::from(stable_hash64(seed, key)) < threshold
}

/// RNG derived from a seed and a salt string, stable across platforms.
pub fn seeded_rng(seed: u64, salt: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Kept row count in count-exact mode.
pub fn round_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round() as usize
}

/// Count-exact subset: exactly `round(n * fraction)` indices out of `0..n`,
/// returned sorted ascending so source order is preserved downstream.
pub fn exact_subset(n: usize, fraction: f64, seed: u64, salt: &str) -> Vec<usize> {
    let k = round_count(n, fraction).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut seeded_rng(seed, salt));
    indices.truncate(k);
    indices.sort_unstable();
    indices
}
