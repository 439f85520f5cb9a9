use std::cmp::Ordering;

use tracing::warn;

use super::{EmbeddingProvider, EmbeddingStore, EmbeddingVector, RetrievalConfig, RetrievalError, RetrievalHit};

/// Exact top-k by cosine similarity, ties broken by ascending statute id.
pub fn dense_topk(
    store: &EmbeddingStore,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    if query.dim() != store.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dim(),
            actual: query.dim(),
        });
    }
    let q = query.as_slice();
    let mut scored: Vec<(f64, usize)> = (0..store.len())
        .map(|i| {
            let dot = store
                .row(i)
                .iter()
                .zip(q)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum::<f64>();
            (dot, i)
        })
        .collect();

    let ids = store.ids();
    let cmp =
        |a: &(f64, usize), b: &(f64, usize)| -> Ordering { b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1])) };
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);

    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(r, (sim, i))| {
            let sim = sim.clamp(-1.0, 1.0);
            RetrievalHit {
                statute_id: ids[i].clone(),
                similarity: sim,
                score: sim,
                rank: r + 1,
            }
        })
        .collect())
}

/// Second-stage scorer applied to each dense candidate list.
pub trait LightweightScorer: Send + Sync {
    /// One score per hit, higher is better.
    fn score(&self, query_text: &str, hits: &[RetrievalHit]) -> Result<Vec<f64>, RetrievalError>;
}

/// Keeps the dense order; the score is the dense similarity.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThroughScorer;

impl LightweightScorer for PassThroughScorer {
    fn score(&self, _query_text: &str, hits: &[RetrievalHit]) -> Result<Vec<f64>, RetrievalError> {
        Ok(hits.iter().map(|h| h.similarity).collect())
    }
}

/// Adapter turning a closure into a scorer.
pub struct FnScorer<F>(pub F);

impl<F> LightweightScorer for FnScorer<F>
where
    F: Fn(&str, &[RetrievalHit]) -> Result<Vec<f64>, RetrievalError> + Send + Sync,
{
    fn score(&self, query_text: &str, hits: &[RetrievalHit]) -> Result<Vec<f64>, RetrievalError> {
        (self.0)(query_text, hits)
    }
}

/// Re-score `hits`, sort by score (stable, so dense order breaks ties) and
/// keep the first `k`. A failing scorer degrades to pass-through.
pub fn lightweight_rerank(
    scorer: &dyn LightweightScorer,
    query_text: &str,
    hits: Vec<RetrievalHit>,
    k: usize,
) -> Vec<RetrievalHit> {
    let scores = match scorer.score(query_text, &hits) {
        Ok(s) if s.len() == hits.len() && s.iter().all(|v| v.is_finite()) => s,
        Ok(s) => {
            warn!(
                expected = hits.len(),
                got = s.len(),
                "scorer returned unusable scores; keeping dense order"
            );
            PassThroughScorer.score(query_text, &hits).unwrap_or_default()
        }
        Err(e) => {
            warn!(error = %e, "scorer unavailable; keeping dense order");
            PassThroughScorer.score(query_text, &hits).unwrap_or_default()
        }
    };
    let mut scored: Vec<(f64, RetrievalHit)> = scores.into_iter().zip(hits).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, (score, hit))| RetrievalHit {
            score,
            rank: r + 1,
            ..hit
        })
        .collect()
}

/// Embed → dense top-k → lightweight prune, over a shared read-only store.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub store: &'a EmbeddingStore,
    pub provider: &'a dyn EmbeddingProvider,
    pub scorer: &'a dyn LightweightScorer,
    pub config: RetrievalConfig,
}

impl<'a> Retriever<'a> {
    pub fn new(
        store: &'a EmbeddingStore,
        provider: &'a dyn EmbeddingProvider,
        scorer: &'a dyn LightweightScorer,
        config: RetrievalConfig,
    ) -> Result<Self, RetrievalError> {
        config.validate()?;
        Ok(Self {
            store,
            provider,
            scorer,
            config,
        })
    }

    /// One retrieval call: `dense_k` candidates pruned to `pruned_k`.
    pub fn retrieve(&self, query_text: &str) -> Result<Vec<RetrievalHit>, RetrievalError> {
        let q = self.embed(query_text)?;
        let dense = dense_topk(self.store, &q, self.config.dense_k)?;
        Ok(lightweight_rerank(self.scorer, query_text, dense, self.config.pruned_k))
    }

    /// Single-shot baseline: `baseline_k` candidates reduced to `pruned_k`.
    pub fn baseline(&self, query_text: &str) -> Result<Vec<RetrievalHit>, RetrievalError> {
        let q = self.embed(query_text)?;
        let dense = dense_topk(self.store, &q, self.config.baseline_k)?;
        if self.config.baseline_rerank {
            Ok(lightweight_rerank(self.scorer, query_text, dense, self.config.pruned_k))
        } else {
            Ok(dense.into_iter().take(self.config.pruned_k).collect())
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::ProviderUnavailable("empty query text".into()));
        }
        let v = self.provider.embed(text)?;
        if v.dim() != self.store.dim() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.store.dim(),
                actual: v.dim(),
            });
        }
        Ok(v)
    }
}
