//! Deterministic hashed bag-of-token embeddings.
//!
//! Each token hashes to one index of a fixed-dimension vector; counts are
//! L2-normalized. No model inference, fully reproducible, good enough for
//! the similarity semantics the simulator needs.

use sha2::{Digest, Sha256};

/// Default embedding dimension used across the fabric.
pub const DEFAULT_DIM: usize = 16;

/// Embed text as an L2-normalized hashed token histogram.
pub fn embed(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let mut h = Sha256::new();
        h.update(b"embed-v1");
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        let idx = (u64::from_le_bytes(first) % dim as u64) as usize;
        v[idx] += 1.0;
    }
    l2_normalize(&mut v);
    v
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Cosine similarity. Zero vectors compare as 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
