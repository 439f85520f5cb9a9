//! Trajectory rewards, group-normalized advantages and the policy-gradient
//! loss, plus a small tabular policy trained in a simulated environment.

mod policy;
mod reward;
mod sim;
mod train;

pub use policy::{ToyPolicy, N_ACTIONS};
pub use reward::{
    final_reward, grpo_loss, hit_rewards, normalize_group, reward_trajectories, step_rewards, total_reward,
    RewardBreakdown, RewardRecord, TrajectoryGroup,
};
pub use sim::{
    single_correct_env, two_strategy_env, ActionEffect, Archetype, Episode, PolicyStep, SimEnv, COVERAGE_BUCKETS,
    SLOTS_PER_CALL,
};
pub use train::{
    batch_loss, episode_log_prob, loss_gradient, sample_group, train_toy, CurvePoint, GroupSample, TrainConfig,
    TrainOutcome,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("trajectory {0:?} lacks per-iteration gold counts (not a training-mode run)")]
    MissingTrainingAnnotations(String),
    #[error("group of {0} is too small to normalize")]
    GroupTooSmall(usize),
    #[error("{advantages} advantages but {log_probs} log-probabilities")]
    LengthMismatch { advantages: usize, log_probs: usize },
    #[error("query {query_id:?} has {got} trajectories, {need} needed for a group")]
    IncompleteGroup { query_id: String, got: usize, need: usize },
    #[error("no labeled query {0:?}")]
    UnknownQuery(String),
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// How an iteration's new gold statutes become a hit reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// `alpha * count`.
    #[default]
    Count,
    /// `alpha * count / |gold|`.
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub step_penalty: f64,
    pub alpha: f64,
    pub fallback_penalty: f64,
    pub epsilon: f64,
    /// Trajectories per group (K).
    pub group_size: usize,
    /// Groups per update (G).
    pub groups_per_batch: usize,
    pub hit_mode: HitMode,
    /// Iterations whose rewrite failed still pay the step penalty.
    pub penalize_skips: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step_penalty: -0.05,
            alpha: 0.1,
            fallback_penalty: -5.0,
            epsilon: 1e-8,
            group_size: 8,
            groups_per_batch: 2,
            hit_mode: HitMode::Count,
            penalize_skips: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.alpha < 0.0 {
            return Err(GrpoError::InvalidConfig("alpha must be non-negative".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(GrpoError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.group_size < 2 {
            return Err(GrpoError::InvalidConfig("group_size must be at least 2".into()));
        }
        if self.groups_per_batch == 0 {
            return Err(GrpoError::InvalidConfig("groups_per_batch must be at least 1".into()));
        }
        Ok(())
    }
}
