use std::collections::HashMap;
use std::io::BufRead;

use serde::Deserialize;

use super::{EmbeddingVector, RetrievalError};

/// Turns query text into a unit vector comparable with the store.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;
}

/// Fixed text → vector table. Used for tests and offline fixtures.
#[derive(Debug, Clone, Default)]
pub struct TableProvider {
    table: HashMap<String, EmbeddingVector>,
}

#[derive(Deserialize)]
struct TextRecord {
    text: String,
    vec: Vec<f32>,
}

impl TableProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f32>) -> Result<(), RetrievalError> {
        let text = text.into();
        let v = EmbeddingVector::new(values).map_err(|reason| RetrievalError::InvalidVector {
            id: text.clone(),
            reason,
        })?;
        self.table.insert(text, v);
        Ok(())
    }

    /// JSONL records of the form `{"text": ..., "vec": [...]}`.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, RetrievalError> {
        let mut p = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TextRecord = serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                record: i + 1,
                reason: e.to_string(),
            })?;
            p.insert(rec.text, rec.vec)?;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for TableProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| RetrievalError::ProviderUnavailable(format!("no vector for {text:?}")))
    }
}

/// Signed feature hashing of character unigrams and bigrams.
///
/// Needs no model and is stable across runs and platforms, which makes it a
/// usable fallback when no embedding service is configured. Similarity is
/// purely lexical.
#[derive(Debug, Clone, Copy)]
pub struct HashingProvider {
    dim: usize,
}

impl HashingProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hashing dimension must be positive");
        Self { dim }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl EmbeddingProvider for HashingProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        if chars.is_empty() {
            return Err(RetrievalError::ProviderUnavailable("empty text".into()));
        }
        let mut v = vec![0f32; self.dim];
        let mut buf = [0u8; 8];
        let mut add = |feature: &str| {
            let h = fnv1a(feature.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if (h >> 63) == 0 { 1.0 } else { -1.0 };
        };
        for c in &chars {
            add(c.encode_utf8(&mut buf));
        }
        for w in chars.windows(2) {
            add(&w.iter().collect::<String>());
        }
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        EmbeddingVector::new(v).map_err(RetrievalError::ProviderUnavailable)
    }
}

/// Embedding service speaking `{"input": text}` → `{"embedding": [...]}`.
#[cfg(feature = "http")]
pub struct HttpEmbeddingProvider {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    dim: Option<usize>,
}

#[cfg(feature = "http")]
impl HttpEmbeddingProvider {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: std::time::Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            token,
            dim: None,
        }
    }

    /// Reject responses whose length differs from the store dimension.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }
}

#[cfg(feature = "http")]
impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f32>,
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({ "input": text }))
            .map_err(|e| RetrievalError::ProviderUnavailable(e.to_string()))?;
        let reply: Reply = resp
            .body_mut()
            .read_json()
            .map_err(|e| RetrievalError::ProviderUnavailable(e.to_string()))?;
        if let Some(dim) = self.dim {
            if reply.embedding.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    actual: reply.embedding.len(),
                });
            }
        }
        EmbeddingVector::new(reply.embedding).map_err(RetrievalError::ProviderUnavailable)
    }
}
