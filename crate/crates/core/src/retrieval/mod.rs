//! Dense retrieval over precomputed statute embeddings.
//!
//! Each reformulated query is embedded, searched exactly against the store
//! (cosine on unit vectors), and pruned by a lightweight scorer to a short
//! candidate list.

mod provider;
mod search;
mod store;

#[cfg(feature = "http")]
pub use provider::HttpEmbeddingProvider;
pub use provider::{EmbeddingProvider, HashingProvider, TableProvider};
pub use search::{dense_topk, lightweight_rerank, FnScorer, LightweightScorer, PassThroughScorer, Retriever};
pub use store::{EmbeddingStore, BINARY_MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("invalid embedding for {id:?}: {reason}")]
    InvalidVector { id: String, reason: String },
    #[error("malformed embedding file at record {record}: {reason}")]
    Malformed { record: usize, reason: String },
    #[error("duplicate embedding id {0:?}")]
    DuplicateId(String),
    #[error("embedding id {0:?} is not in the corpus")]
    UnknownId(String),
    #[error("empty embedding store")]
    EmptyStore,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite, unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

/// Vectors whose norm is already within this distance of 1 are stored as-is.
pub const UNIT_TOLERANCE: f64 = 1e-6;

impl EmbeddingVector {
    /// Validate and normalize raw values. Rejects empty, non-finite and zero
    /// vectors.
    pub fn new(mut values: Vec<f32>) -> Result<Self, String> {
        if values.is_empty() {
            return Err("empty vector".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err("zero vector".into());
        }
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            for v in &mut values {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub statute_id: String,
    /// Cosine similarity to the query, clamped to [-1, 1].
    pub similarity: f64,
    /// Score from the lightweight scorer; equals `similarity` under
    /// pass-through.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub dense_k: usize,
    pub pruned_k: usize,
    pub baseline_k: usize,
    /// Apply the lightweight scorer to the baseline list before truncation.
    pub baseline_rerank: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            dense_k: 30,
            pruned_k: 10,
            baseline_k: 60,
            baseline_rerank: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.dense_k == 0 || self.pruned_k == 0 || self.baseline_k == 0 {
            return Err(RetrievalError::InvalidConfig("k values must be >= 1".into()));
        }
        if self.pruned_k > self.dense_k {
            return Err(RetrievalError::InvalidConfig(format!(
                "pruned_k ({}) exceeds dense_k ({})",
                self.pruned_k, self.dense_k
            )));
        }
        if self.pruned_k > self.baseline_k {
            return Err(RetrievalError::InvalidConfig(format!(
                "pruned_k ({}) exceeds baseline_k ({})",
                self.pruned_k, self.baseline_k
            )));
        }
        Ok(())
    }
}
