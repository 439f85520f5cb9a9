use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalHit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub statute_id: String,
    pub best_score: f64,
    /// 1-based planner iteration that first retrieved this statute.
    pub first_iteration: usize,
    pub source_reformulation: String,
}

/// Deduplicated union of everything retrieved during one run, in first-seen
/// order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<PoolEntry>", into = "Vec<PoolEntry>")]
pub struct CandidatePool {
    entries: Vec<PoolEntry>,
    index: HashMap<String, usize>,
}

impl From<Vec<PoolEntry>> for CandidatePool {
    fn from(entries: Vec<PoolEntry>) -> Self {
        let mut pool = Self::default();
        for e in entries {
            match pool.index.get(&e.statute_id) {
                Some(&i) => {
                    let old = &mut pool.entries[i];
                    old.best_score = old.best_score.max(e.best_score);
                }
                None => {
                    pool.index.insert(e.statute_id.clone(), pool.entries.len());
                    pool.entries.push(e);
                }
            }
        }
        pool
    }
}

impl From<CandidatePool> for Vec<PoolEntry> {
    fn from(pool: CandidatePool) -> Self {
        pool.entries
    }
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&PoolEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.statute_id.as_str())
    }

    /// Merge one retrieval. New ids are appended in hit order; a repeated id
    /// keeps its first iteration and source and takes the larger score.
    /// Returns the ids that were new.
    pub fn merge(&mut self, hits: &[RetrievalHit], iteration: usize, source: &str) -> Vec<String> {
        let mut fresh = Vec::new();
        for h in hits {
            match self.index.get(&h.statute_id) {
                Some(&i) => {
                    let e = &mut self.entries[i];
                    if h.score > e.best_score {
                        e.best_score = h.score;
                    }
                }
                None => {
                    self.index.insert(h.statute_id.clone(), self.entries.len());
                    self.entries.push(PoolEntry {
                        statute_id: h.statute_id.clone(),
                        best_score: h.score,
                        first_iteration: iteration,
                        source_reformulation: source.to_string(),
                    });
                    fresh.push(h.statute_id.clone());
                }
            }
        }
        fresh
    }

    /// Entries by best score descending, ties by id.
    pub fn ranked(&self) -> Vec<&PoolEntry> {
        let mut v: Vec<&PoolEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| {
            b.best_score
                .total_cmp(&a.best_score)
                .then_with(|| a.statute_id.cmp(&b.statute_id))
        });
        v
    }
}

/// Functional form of [`CandidatePool::merge`].
pub fn merge_dedup(pool: &CandidatePool, hits: &[RetrievalHit], iteration: usize, source: &str) -> CandidatePool {
    let mut out = pool.clone();
    out.merge(hits, iteration, source);
    out
}
