//! Embedding access: trait, L2 normalization, cosine, and the deterministic
//! hashing mock used for offline runs and tests.

use crate::error::{Error, Result};
use crate::util;
use rand::Rng;
use sha2::{Digest, Sha256};

/// Batch embedding. Returned vectors are unit-normalized (L2 within 1e-6)
/// and identical texts always produce identical vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Scale a vector to unit L2 norm in place. Zero vectors cannot be
/// normalized and are a protocol violation from the producing endpoint.
pub fn normalize(vector: &mut [f64]) -> Result<()> {
    let norm: f64 = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::protocol("embedding vector has no finite nonzero norm", ""));
    }
    for v in vector.iter_mut() {
        *v /= norm;
    }
    Ok(())
}

/// Cosine similarity. Bit-identical vectors short-circuit to exactly 1.0:
/// cos(v, v) = 1 for any nonzero v, and the float dot product would land a
/// few ulp off, which matters to exact-equality checks downstream.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Deterministic pseudo-embedder: each text hashes to an RNG seed that draws
/// a unit vector. No semantics, but stable, distinct per text, and fast,
/// which is what offline pipeline runs and analytics tests need.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 64, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> HashEmbedder {
        HashEmbedder { dim, seed }
    }

    fn vector_for(&self, text: &str) -> Result<Vec<f64>> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = util::seeded_rng(seed);
        let mut vector: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut vector)?;
        Ok(vector)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::invalid("embedding input texts must be non-empty"));
        }
        texts.iter().map(|t| self.vector_for(t)).collect()
    }
}
