use std::collections::BTreeMap;

use thiserror::Error;

use crate::text::{eval_tokens, stable_hash};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Text to fixed-width real vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(SimilarityError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Token counts hashed into `dim` buckets, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in eval_tokens(text) {
            v[(stable_hash(&[tok.as_bytes()]) % self.dim as u64) as usize] += 1.0;
        }
        l2_normalize(v)
    }
}

/// One dimension per known token plus a shared bucket for unknown tokens.
/// Distinct known tokens embed to orthogonal vectors.
#[derive(Debug, Clone)]
pub struct OneHotEmbedder {
    index: BTreeMap<String, usize>,
}

impl OneHotEmbedder {
    pub fn new<I, S>(vocab: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut index = BTreeMap::new();
        for word in vocab {
            for tok in eval_tokens(word.as_ref()) {
                let next = index.len();
                index.entry(tok).or_insert(next);
            }
        }
        Self { index }
    }
}

impl Embedder for OneHotEmbedder {
    fn dim(&self) -> usize {
        self.index.len() + 1
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for tok in eval_tokens(text) {
            let i = self.index.get(&tok).copied().unwrap_or(self.index.len());
            v[i] += 1.0;
        }
        l2_normalize(v)
    }
}
