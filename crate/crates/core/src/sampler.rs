//! Seedable random stream shared by every stochastic component.
//!
//! All randomness in the benchmark (initial positions, weight init, dropout
//! masks, figure-eight noise) flows through [`SeededSampler`], which wraps a
//! ChaCha8 stream cipher generator. The same seed always yields the same
//! stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Name of the generator algorithm, recorded in report metadata.
pub const SAMPLER_ALGORITHM: &str = "chacha8";

/// A deterministic random stream.
#[derive(Debug, Clone)]
pub struct SeededSampler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream from a base seed and a list of labelled
    /// coordinates. Distinct coordinate lists give distinct 256-bit keys.
    pub fn derive(seed: u64, label: &str, coords: &[u64]) -> Self {
        let key = derive_key(seed, label, coords);
        let mut short = [0u8; 8];
        short.copy_from_slice(&key[..8]);
        Self {
            seed: u64::from_le_bytes(short),
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw from the closed-open interval `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Returns `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// SHA-256 over a length-prefixed encoding of `(seed, label, coords)`.
pub fn derive_key(seed: u64, label: &str, coords: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update((coords.len() as u64).to_le_bytes());
    for c in coords {
        hasher.update(c.to_le_bytes());
    }
    hasher.finalize().into()
}
