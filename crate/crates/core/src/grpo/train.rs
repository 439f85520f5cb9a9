use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{ToyPolicy, N_ACTIONS};
use super::reward::{normalize_group, total_reward, RewardBreakdown};
use super::sim::{Episode, SimEnv};
use super::{GrpoError, RewardConfig};

/// One sampled group with its rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub episodes: Vec<Episode>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

/// `sum_t log pi(a_t | s_t)` over the policy's choices in one episode.
pub fn episode_log_prob(policy: &ToyPolicy, episode: &Episode) -> f64 {
    episode.steps.iter().map(|s| policy.log_prob(s.state, s.action)).sum()
}

/// Sum of the per-group losses `-(1/K) sum_i A_i log pi(tau_i)`.
pub fn batch_loss(policy: &ToyPolicy, batch: &[GroupSample]) -> f64 {
    let mut total = 0.0;
    for g in batch {
        let k = g.episodes.len() as f64;
        let s: f64 = g
            .episodes
            .iter()
            .zip(&g.advantages)
            .map(|(e, a)| a * episode_log_prob(policy, e))
            .sum();
        total += -s / k;
    }
    total
}

/// Gradient of [`batch_loss`] with respect to every logit, advantages held
/// fixed. For a softmax, `d log pi(a|s) / d logit(s, b) = [a == b] - pi(b|s)`.
pub fn loss_gradient(policy: &ToyPolicy, batch: &[GroupSample]) -> Vec<f64> {
    let mut grad = vec![0.0; policy.logits().len()];
    for g in batch {
        let k = g.episodes.len() as f64;
        for (e, &adv) in g.episodes.iter().zip(&g.advantages) {
            if adv == 0.0 {
                continue;
            }
            let w = -adv / k;
            for step in &e.steps {
                let p = policy.probs(step.state);
                let row = &mut grad[step.state * N_ACTIONS..(step.state + 1) * N_ACTIONS];
                let a = step.action.index();
                for b in 0..N_ACTIONS {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    row[b] += w * (indicator - p[b]);
                }
            }
        }
    }
    grad
}

/// Sample `group_size` episodes of one archetype and score them.
pub fn sample_group(
    env: &SimEnv,
    policy: &ToyPolicy,
    archetype: usize,
    config: &RewardConfig,
    rng: &mut ChaCha8Rng,
    id_prefix: &str,
) -> Result<GroupSample, GrpoError> {
    let gold = env.gold(archetype);
    let mut episodes = Vec::with_capacity(config.group_size);
    let mut rewards = Vec::with_capacity(config.group_size);
    for i in 0..config.group_size {
        let e = env.episode(archetype, &format!("{id_prefix}.{i}"), rng, |s, r| policy.sample(s, r));
        rewards.push(total_reward(&e.trajectory, &gold, config)?);
        episodes.push(e);
    }
    let totals: Vec<f64> = rewards.iter().map(|b| b.total).collect();
    let advantages = normalize_group(&totals, config.epsilon)?.advantages;
    Ok(GroupSample {
        episodes,
        rewards,
        advantages,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub reward: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 200,
            learning_rate: 0.1,
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based update number.
    pub update: usize,
    /// Mean total reward of the trajectories sampled for this update.
    pub mean_reward: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub policy: ToyPolicy,
}

/// Plain gradient descent on the batch loss. Group `g` of update `u` draws
/// archetype `(u * G + g) mod n` and uses RNG stream `u * G + g` of the
/// master seed, so runs are reproducible bit for bit.
pub fn train_toy(env: &SimEnv, config: &TrainConfig) -> Result<TrainOutcome, GrpoError> {
    env.validate()?;
    config.reward.validate()?;
    let mut policy = ToyPolicy::new(env.n_states());
    let g = config.reward.groups_per_batch;
    let n_arch = env.archetypes.len();
    let mut curve = Vec::with_capacity(config.iterations);
    for update in 0..config.iterations {
        let mut batch = Vec::with_capacity(g);
        for j in 0..g {
            let stream = (update * g + j) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(stream);
            let arch = (update * g + j) % n_arch;
            batch.push(sample_group(
                env,
                &policy,
                arch,
                &config.reward,
                &mut rng,
                &format!("u{update}g{j}"),
            )?);
        }
        let loss = batch_loss(&policy, &batch);
        let grad = loss_gradient(&policy, &batch);
        for (l, d) in policy.logits_mut().iter_mut().zip(&grad) {
            *l -= config.learning_rate * d;
        }
        let n: usize = batch.iter().map(|b| b.rewards.len()).sum();
        let mean_reward = batch
            .iter()
            .flat_map(|b| b.rewards.iter().map(|r| r.total))
            .sum::<f64>()
            / n as f64;
        curve.push(CurvePoint {
            update: update + 1,
            mean_reward,
            loss,
            grad_norm: grad.iter().map(|x| x * x).sum::<f64>().sqrt(),
        });
    }
    Ok(TrainOutcome { curve, policy })
}
