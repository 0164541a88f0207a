//! Seed derivation, content hashing, and dB conversions shared across modules.

use nalgebra::DVector;
use sha2::{Digest, Sha256};
use std::sync::atomic::{AtomicU64, Ordering};

/// splitmix64 finalizer. Stable across platforms, used for all seed derivation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a root seed and a stream index.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_add(1)))
}

/// 10*log10 with a sentinel for exactly-zero inputs.
pub fn to_db(linear: f64) -> Option<f64> {
    if linear > 0.0 {
        Some(10.0 * linear.log10())
    } else {
        None
    }
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// SHA-256 over a byte stream, hex-encoded. Used for graph/dataset lineage.
pub struct ContentHasher {
    inner: Sha256,
}

impl ContentHasher {
    pub fn new() -> Self {
        Self { inner: Sha256::new() }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn update_f64(&mut self, x: f64) {
        self.inner.update(x.to_le_bytes());
    }

    pub fn update_vector(&mut self, v: &DVector<f64>) {
        for x in v.iter() {
            self.update_f64(*x);
        }
    }

    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}

impl Default for ContentHasher {
    fn default() -> Self {
        Self::new()
    }
}

/// Counts dense matrix inversions/factorizations performed by the filters.
/// The benchmark asserts that the graph-filter gain path never touches it.
pub static MATRIX_INVERSIONS: AtomicU64 = AtomicU64::new(0);

pub fn record_matrix_inversion() {
    MATRIX_INVERSIONS.fetch_add(1, Ordering::Relaxed);
}

pub fn matrix_inversions() -> u64 {
    MATRIX_INVERSIONS.load(Ordering::Relaxed)
}

/// Checks that every entry of a vector is finite.
pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_index() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut dedup = s.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), s.len());
    }

    #[test]
    fn db_roundtrip() {
        let x = 0.0316;
        assert!((from_db(to_db(x).unwrap()) - x).abs() < 1e-12);
        assert_eq!(to_db(0.0), None);
    }
}
