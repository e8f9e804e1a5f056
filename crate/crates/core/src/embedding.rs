//! Embedding provider interfaces and small deterministic implementations.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::retrieval::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("embedder failure: {0}")]
pub struct EmbedError(pub String);

/// Maps a whole text to one vector.
pub trait EmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Maps a text to one vector per token.
pub trait TokenEmbeddingProvider {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbedError>;
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity; 0 when either vector is zero or lengths differ.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Bag-of-words feature hashing into a fixed number of buckets.
///
/// Offline stand-in for a trained sentence encoder.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dims: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dims: 256 }
    }
}

impl HashingEmbedder {
    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims];
        let h = fnv1a(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % self.dims as u64) as usize] = sign;
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if self.dims == 0 {
            return Err(EmbedError("zero dimensions".into()));
        }
        let mut v = vec![0.0; self.dims];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dims as u64) as usize] += sign;
        }
        Ok(normalize(v))
    }
}

impl TokenEmbeddingProvider for HashingEmbedder {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
        if self.dims == 0 {
            return Err(EmbedError("zero dimensions".into()));
        }
        Ok(tokenize(text).iter().map(|t| self.token_vector(t)).collect())
    }
}

/// One-hot token embedder over a fixed vocabulary of whitespace tokens.
///
/// Distinct vocabulary entries are orthogonal; unknown tokens fail.
#[derive(Debug, Clone)]
pub struct OneHotEmbedder {
    vocab: Vec<String>,
}

impl OneHotEmbedder {
    pub fn new<I, S>(vocab: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { vocab: vocab.into_iter().map(Into::into).collect() }
    }
}

impl TokenEmbeddingProvider for OneHotEmbedder {
    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
        text.split_whitespace()
            .map(|token| {
                let idx = self
                    .vocab
                    .iter()
                    .position(|v| v == token)
                    .ok_or_else(|| EmbedError(alloc::format!("token `{token}` not in vocabulary")))?;
                let mut v = vec![0.0; self.vocab.len()];
                v[idx] = 1.0;
                Ok(v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_edges() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[2.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn hashing_embedder_is_unit_and_deterministic() {
        let e = HashingEmbedder::default();
        let a = e.embed("question answering dataset").unwrap();
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a, e.embed("question answering dataset").unwrap());
        assert!(e.embed("").unwrap().iter().all(|x| *x == 0.0));
        assert_eq!(e.embed_tokens("a b c").unwrap().len(), 3);
    }

    #[test]
    fn one_hot() {
        let e = OneHotEmbedder::new(["a", "b"]);
        assert_eq!(e.embed_tokens("b a").unwrap(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(e.embed_tokens("c").is_err());
    }
}
