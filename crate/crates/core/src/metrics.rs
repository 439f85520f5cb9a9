//! Ranking metrics and rollout statistics.
//!
//! All ranking metrics use binary relevance against a non-empty gold set and
//! look at the first `k` items of the ranked list. A statute repeated in the
//! list counts only at its first position.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GoldSet, Query};
use crate::orchestrator::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("rollout matrix: {0}")]
    InvalidMatrix(String),
}

/// What MRR scores when nothing relevant is in the top `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissMode {
    /// The miss is ranked at `k + 1`, scoring `1 / (k + 1)`.
    #[default]
    #[serde(rename = "k-plus-one")]
    KPlusOne,
    /// The miss scores 0.
    Conventional,
}

impl FromStr for MissMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "k-plus-one" | "k+1" => Ok(Self::KPlusOne),
            "conventional" | "zero" => Ok(Self::Conventional),
            other => Err(format!(
                "unknown MRR miss mode {other:?} (expected k-plus-one or conventional)"
            )),
        }
    }
}

impl fmt::Display for MissMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::KPlusOne => "k-plus-one",
            Self::Conventional => "conventional",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    #[serde(rename = "ranked_ids", alias = "ids")]
    pub ids: Vec<String>,
}

fn check(gold: &GoldSet, k: usize) -> Result<(), MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    Ok(())
}

/// 1-based positions within the top `k` that hold a gold statute seen for
/// the first time.
fn relevant_positions<S: AsRef<str>>(ranked: &[S], gold: &GoldSet, k: usize) -> Vec<usize> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    for (i, id) in ranked.iter().take(k).enumerate() {
        let id = id.as_ref();
        if seen.insert(id) && gold.contains(id) {
            out.push(i + 1);
        }
    }
    out
}

pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], gold: &GoldSet, k: usize) -> Result<f64, MetricError> {
    check(gold, k)?;
    Ok(relevant_positions(ranked, gold, k).len() as f64 / gold.len() as f64)
}

pub fn mrr_at_k<S: AsRef<str>>(ranked: &[S], gold: &GoldSet, k: usize, mode: MissMode) -> Result<f64, MetricError> {
    check(gold, k)?;
    Ok(match relevant_positions(ranked, gold, k).first() {
        Some(&rank) => 1.0 / rank as f64,
        None => match mode {
            MissMode::KPlusOne => 1.0 / (k + 1) as f64,
            MissMode::Conventional => 0.0,
        },
    })
}

pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], gold: &GoldSet, k: usize) -> Result<f64, MetricError> {
    check(gold, k)?;
    let gain = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let dcg: f64 = relevant_positions(ranked, gold, k).into_iter().map(gain).sum();
    let idcg: f64 = (1..=gold.len().min(k)).map(gain).sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

pub fn hitrate_at_k<S: AsRef<str>>(ranked: &[S], gold: &GoldSet, k: usize) -> Result<f64, MetricError> {
    check(gold, k)?;
    Ok(if ranked.iter().take(k).any(|id| gold.contains(id.as_ref())) {
        1.0
    } else {
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub hitrate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub miss_mode: MissMode,
    /// Queries with a non-empty gold set.
    pub n_queries: usize,
    /// Of those, queries with no ranked list (scored as empty lists).
    pub missing_lists: usize,
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
    pub hitrate: f64,
    pub per_query: Vec<QueryMetrics>,
}

/// Means over every query with a non-empty gold set, in query order.
pub fn evaluate(
    lists: &[RankedList],
    queries: &[Query],
    k: usize,
    mode: MissMode,
) -> Result<MetricReport, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    let by_id: HashMap<&str, &RankedList> = lists.iter().map(|l| (l.query_id.as_str(), l)).collect();
    let mut per_query = Vec::new();
    let mut missing = 0;
    for q in queries {
        let Some(gold) = q.gold.as_ref().filter(|g| !g.is_empty()) else {
            continue;
        };
        let ids: &[String] = match by_id.get(q.id.as_str()) {
            Some(l) => &l.ids,
            None => {
                missing += 1;
                &[]
            }
        };
        per_query.push(QueryMetrics {
            query_id: q.id.clone(),
            recall: recall_at_k(ids, gold, k)?,
            mrr: mrr_at_k(ids, gold, k, mode)?,
            ndcg: ndcg_at_k(ids, gold, k)?,
            hitrate: hitrate_at_k(ids, gold, k)?,
        });
    }
    let n = per_query.len();
    let mean = |f: fn(&QueryMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_query.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(MetricReport {
        k,
        miss_mode: mode,
        n_queries: n,
        missing_lists: missing,
        recall: mean(|m| m.recall),
        mrr: mean(|m| m.mrr),
        ndcg: mean(|m| m.ndcg),
        hitrate: mean(|m| m.hitrate),
        per_query,
    })
}

/// Recall of every rollout of every query; all rows have the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMatrix {
    rows: Vec<(String, Vec<f64>)>,
}

impl RolloutMatrix {
    pub fn new(rows: Vec<(String, Vec<f64>)>) -> Result<Self, MetricError> {
        if let Some((_, first)) = rows.first() {
            let r = first.len();
            if r == 0 {
                return Err(MetricError::InvalidMatrix("rows must hold at least one rollout".into()));
            }
            for (id, row) in &rows {
                if row.len() != r {
                    return Err(MetricError::InvalidMatrix(format!(
                        "query {id:?} has {} rollouts, expected {r}",
                        row.len()
                    )));
                }
                if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(MetricError::InvalidMatrix(format!(
                        "query {id:?} has recall outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    /// Pool recall per trajectory, grouped by query in first-seen order.
    /// Queries without gold are skipped.
    pub fn from_trajectories(trajectories: &[Trajectory], queries: &[Query]) -> Result<Self, MetricError> {
        let gold: HashMap<&str, &GoldSet> = queries
            .iter()
            .filter_map(|q| q.gold.as_ref().filter(|g| !g.is_empty()).map(|g| (q.id.as_str(), g)))
            .collect();
        let mut order: Vec<String> = Vec::new();
        let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in trajectories {
            let Some(g) = gold.get(t.query_id.as_str()) else {
                continue;
            };
            let ids: Vec<&str> = t.pool.ids().collect();
            let recall = recall_at_k(&ids, g, ids.len().max(1))?;
            if !grouped.contains_key(&t.query_id) {
                order.push(t.query_id.clone());
            }
            grouped.entry(t.query_id.clone()).or_default().push(recall);
        }
        Self::new(
            order
                .into_iter()
                .map(|id| {
                    let row = grouped.remove(&id).unwrap_or_default();
                    (id, row)
                })
                .collect(),
        )
    }

    pub fn n_queries(&self) -> usize {
        self.rows.len()
    }

    pub fn rollouts(&self) -> usize {
        self.rows.first().map_or(0, |(_, r)| r.len())
    }

    pub fn rows(&self) -> &[(String, Vec<f64>)] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variability {
    pub avg_max: f64,
    pub avg_mean: f64,
    pub avg_min: f64,
}

/// Eight-rollout recall statistics reported for the trained policy on the
/// STARD training split. Reference only; they need that policy to reproduce.
pub const PUBLISHED_VARIABILITY: Variability = Variability {
    avg_max: 0.8725,
    avg_mean: 0.8098,
    avg_min: 0.7511,
};

/// Category counts reported alongside [`PUBLISHED_VARIABILITY`].
pub const PUBLISHED_CATEGORY_COUNTS: [usize; 4] = [763, 186, 78, 207];

pub fn variability(matrix: &RolloutMatrix) -> Variability {
    let n = matrix.n_queries();
    if n == 0 {
        return Variability {
            avg_max: 0.0,
            avg_mean: 0.0,
            avg_min: 0.0,
        };
    }
    let (mut sx, mut sm, mut sn) = (0.0, 0.0, 0.0);
    for (_, row) in matrix.rows() {
        sx += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        sm += row.iter().sum::<f64>() / row.len() as f64;
        sn += row.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Variability {
        avg_max: sx / n as f64,
        avg_mean: sm / n as f64,
        avg_min: sn / n as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryThresholds {
    /// Recall at or above this counts as fully correct.
    pub full_recall: f64,
    /// Max and min within this distance count as stable.
    pub stability_tolerance: f64,
}

impl Default for CategoryThresholds {
    fn default() -> Self {
        Self {
            full_recall: 1.0,
            stability_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Every rollout fully correct.
    StableCorrect = 1,
    /// Some rollouts fully correct, some not.
    OccasionallyCorrect = 2,
    /// Never fully correct, recall varies.
    UnstableIncorrect = 3,
    /// Never fully correct, recall constant.
    ConsistentlyIncorrect = 4,
}

impl Category {
    pub fn number(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::StableCorrect => "stable and always correct",
            Self::OccasionallyCorrect => "occasionally correct but unstable",
            Self::UnstableIncorrect => "never fully correct but unstable",
            Self::ConsistentlyIncorrect => "consistently incorrect",
        }
    }
}

pub fn categorize_row(row: &[f64], t: &CategoryThresholds) -> Category {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= t.full_recall {
        Category::StableCorrect
    } else if max >= t.full_recall {
        Category::OccasionallyCorrect
    } else if max - min > t.stability_tolerance {
        Category::UnstableIncorrect
    } else {
        Category::ConsistentlyIncorrect
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    /// Counts for categories 1 to 4.
    pub counts: [usize; 4],
    pub per_query: Vec<(String, Category)>,
}

impl CategoryReport {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn categorize(matrix: &RolloutMatrix, thresholds: &CategoryThresholds) -> CategoryReport {
    let mut counts = [0; 4];
    let per_query = matrix
        .rows()
        .iter()
        .map(|(id, row)| {
            let c = categorize_row(row, thresholds);
            counts[c.number() - 1] += 1;
            (id.clone(), c)
        })
        .collect();
    CategoryReport { counts, per_query }
}
