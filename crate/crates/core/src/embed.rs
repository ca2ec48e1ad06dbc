//! Embeddings and the embedding-provider interface.
//!
//! The default provider is a hashed bag of words: lowercase, split on
//! non-alphanumeric characters, FNV-1a 64 each token into one of `dim`
//! buckets, count, L2-normalize. It is deterministic and hermetic; real
//! sentence encoders plug in through [`Embedder`] (see `http::RemoteEmbedder`).

use std::hash::Hasher;

use fnv::FnvHasher;
use thiserror::Error;

use crate::case::{Case, CaseId};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding transport failure: {0}")]
    Transport(String),
    #[error("embedding provider protocol error: {0}")]
    Protocol(String),
}

/// A dense vector, L2-normalized unless it is the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    /// Normalizes `values`; an all-zero (or non-finite) input yields the zero vector.
    pub fn from_raw(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            Self { values, norm }
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
            Self { values, norm: 0.0 }
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            norm: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

/// Cosine similarity of two embeddings; 0 when either is the zero vector.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.is_zero() || b.is_zero() {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashBagEmbedder {
    dim: usize,
}

impl Default for HashBagEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl HashBagEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bucket a single (already lowercased) token lands in.
    pub fn bucket(&self, token: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(token.as_bytes());
        (h.finish() % self.dim as u64) as usize
    }
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashBagEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut counts = vec![0.0; self.dim];
        for token in tokenize(text) {
            counts[self.bucket(&token)] += 1.0;
        }
        Ok(Embedding::from_raw(counts))
    }
}

/// Prompt and (optional) failure embedding of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedCase {
    pub case_id: CaseId,
    pub prompt: Embedding,
    pub failure: Option<Embedding>,
}

impl EmbeddedCase {
    /// Embeds the case input and, when the signature carries any failure
    /// text, that text.
    pub fn from_case(case: &Case, embedder: &dyn Embedder) -> Result<Self, EmbedError> {
        let prompt = embedder.embed(&case.input)?;
        let failure_text = case.signature.failure_text();
        let failure = if failure_text.is_empty() {
            None
        } else {
            Some(embedder.embed(&failure_text)?)
        };
        Ok(Self {
            case_id: case.case_id.clone(),
            prompt,
            failure,
        })
    }

    /// The indicator `h(c)`.
    pub fn has_failure(&self) -> bool {
        self.failure.is_some()
    }
}
