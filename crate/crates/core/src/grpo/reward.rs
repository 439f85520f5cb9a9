use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GrpoError, HitMode, RewardConfig};
use crate::corpus::{GoldSet, Query};
use crate::metrics::recall_at_k;
use crate::orchestrator::{CandidatePool, Termination, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_final: f64,
    pub r_hits: Vec<f64>,
    pub r_steps: Vec<f64>,
    pub fallback: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Sum of the parts, in the same order `total` was formed.
    pub fn recompose(&self) -> f64 {
        self.r_final + self.r_hits.iter().sum::<f64>() + self.r_steps.iter().sum::<f64>() + self.fallback
    }
}

/// Recall of the whole pool against the gold set.
pub fn final_reward(pool: &CandidatePool, gold: &GoldSet) -> Result<f64, GrpoError> {
    let ids: Vec<&str> = pool.ids().collect();
    Ok(recall_at_k(&ids, gold, ids.len().max(1))?)
}

/// `alpha` times the gold statutes each iteration added to the pool.
pub fn hit_rewards(trajectory: &Trajectory, gold: &GoldSet, config: &RewardConfig) -> Result<Vec<f64>, GrpoError> {
    if gold.is_empty() {
        return Err(GrpoError::EmptyGold);
    }
    trajectory
        .records
        .iter()
        .map(|r| {
            let delta = r
                .new_gold
                .ok_or_else(|| GrpoError::MissingTrainingAnnotations(trajectory.trajectory_id.clone()))?;
            Ok(match config.hit_mode {
                HitMode::Count => config.alpha * delta as f64,
                HitMode::Fraction => config.alpha * delta as f64 / gold.len() as f64,
            })
        })
        .collect()
}

pub fn step_rewards(trajectory: &Trajectory, config: &RewardConfig) -> Vec<f64> {
    trajectory
        .records
        .iter()
        .map(|r| {
            if r.skipped && !config.penalize_skips {
                0.0
            } else {
                config.step_penalty
            }
        })
        .collect()
}

pub fn total_reward(
    trajectory: &Trajectory,
    gold: &GoldSet,
    config: &RewardConfig,
) -> Result<RewardBreakdown, GrpoError> {
    let r_hits = hit_rewards(trajectory, gold, config)?;
    let r_steps = step_rewards(trajectory, config);
    let (r_final, fallback) = if trajectory.terminated_by == Termination::InvalidEarlyExit {
        (0.0, config.fallback_penalty)
    } else {
        (final_reward(&trajectory.pool, gold)?, 0.0)
    };
    let mut b = RewardBreakdown {
        r_final,
        r_hits,
        r_steps,
        fallback,
        total: 0.0,
    };
    b.total = b.recompose();
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub advantages: Vec<f64>,
}

/// `(R - mean) / (std + epsilon)`. A group whose rewards are all equal gets
/// all-zero advantages.
pub fn normalize_group(rewards: &[f64], epsilon: f64) -> Result<TrajectoryGroup, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let constant = rewards.iter().all(|&r| r == rewards[0]);
    let std = if constant {
        0.0
    } else {
        (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let advantages = if constant {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect()
    };
    Ok(TrajectoryGroup {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}

/// `-(1/K) * sum(advantage_i * log_prob_i)` for one group.
pub fn grpo_loss(advantages: &[f64], log_probs: &[f64]) -> Result<f64, GrpoError> {
    if advantages.len() != log_probs.len() {
        return Err(GrpoError::LengthMismatch {
            advantages: advantages.len(),
            log_probs: log_probs.len(),
        });
    }
    if advantages.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = advantages.iter().zip(log_probs).map(|(a, l)| a * l).sum();
    Ok(-s / advantages.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub query_id: String,
    pub trajectory_id: String,
    pub r_final: f64,
    pub r_hits: Vec<f64>,
    pub r_steps: Vec<f64>,
    pub fallback: f64,
    pub total: f64,
    pub advantage: Option<f64>,
}

/// Score recorded runs. With `normalize`, every labeled query needs at
/// least `group_size` trajectories and all of them form its group.
pub fn reward_trajectories(
    trajectories: &[Trajectory],
    queries: &[Query],
    config: &RewardConfig,
    normalize: bool,
) -> Result<Vec<RewardRecord>, GrpoError> {
    let gold: BTreeMap<&str, &GoldSet> = queries
        .iter()
        .filter_map(|q| q.gold.as_ref().map(|g| (q.id.as_str(), g)))
        .collect();
    let mut out = Vec::with_capacity(trajectories.len());
    let mut by_query: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for t in trajectories {
        let g = gold
            .get(t.query_id.as_str())
            .ok_or_else(|| GrpoError::UnknownQuery(t.query_id.clone()))?;
        let b = total_reward(t, g, config)?;
        by_query.entry(t.query_id.as_str()).or_default().push(out.len());
        out.push(RewardRecord {
            query_id: t.query_id.clone(),
            trajectory_id: t.trajectory_id.clone(),
            r_final: b.r_final,
            r_hits: b.r_hits,
            r_steps: b.r_steps,
            fallback: b.fallback,
            total: b.total,
            advantage: None,
        });
    }
    if normalize {
        for (qid, idx) in by_query {
            if idx.len() < config.group_size {
                return Err(GrpoError::IncompleteGroup {
                    query_id: qid.to_string(),
                    got: idx.len(),
                    need: config.group_size,
                });
            }
            let rewards: Vec<f64> = idx.iter().map(|&i| out[i].total).collect();
            let group = normalize_group(&rewards, config.epsilon)?;
            for (&i, a) in idx.iter().zip(group.advantages) {
                out[i].advantage = Some(a);
            }
        }
    }
    Ok(out)
}
