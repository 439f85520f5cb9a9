//! Browser bindings: ranking metrics for one query, group-normalized
//! advantages, and a toy policy training curve. Every export takes plain
//! values and returns a JSON string.

use malr_core::agents::PlannerAction;
use malr_core::corpus::GoldSet;
use malr_core::grpo::{normalize_group, single_correct_env, train_toy, two_strategy_env, RewardConfig, TrainConfig};
use malr_core::metrics::{hitrate_at_k, mrr_at_k, ndcg_at_k, recall_at_k, MissMode};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn split_ids(s: &str) -> Vec<String> {
    s.split([',', '\n', ' ', '\t'])
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(String::from)
        .collect()
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    split_ids(s)
        .iter()
        .map(|x| x.parse::<f64>().map_err(|_| format!("not a number: {x}")))
        .collect()
}

#[derive(Serialize)]
struct MetricsOut {
    k: usize,
    recall: f64,
    mrr: f64,
    mrr_conventional: f64,
    ndcg: f64,
    hitrate: f64,
}

pub fn metrics_json(ranked: &str, gold: &str, k: usize) -> Result<String, String> {
    let ranked = split_ids(ranked);
    let gold: GoldSet = split_ids(gold).into_iter().collect();
    let e = |r: Result<f64, malr_core::metrics::MetricError>| r.map_err(|e| e.to_string());
    let out = MetricsOut {
        k,
        recall: e(recall_at_k(&ranked, &gold, k))?,
        mrr: e(mrr_at_k(&ranked, &gold, k, MissMode::KPlusOne))?,
        mrr_conventional: e(mrr_at_k(&ranked, &gold, k, MissMode::Conventional))?,
        ndcg: e(ndcg_at_k(&ranked, &gold, k))?,
        hitrate: e(hitrate_at_k(&ranked, &gold, k))?,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct AdvantagesOut {
    mean: f64,
    std: f64,
    advantages: Vec<f64>,
}

pub fn advantages_json(rewards: &str, epsilon: f64) -> Result<String, String> {
    let rewards = parse_numbers(rewards)?;
    let g = normalize_group(&rewards, epsilon).map_err(|e| e.to_string())?;
    let out = AdvantagesOut {
        mean: g.mean,
        std: g.std,
        advantages: g.advantages,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurveOut {
    mean_reward: Vec<f64>,
    loss: Vec<f64>,
    /// Greedy action per reachable state of the first archetype.
    greedy: Vec<String>,
}

pub fn curve_json(
    preset: &str,
    seed: u64,
    iterations: usize,
    learning_rate: f64,
    alpha: f64,
    step_penalty: f64,
) -> Result<String, String> {
    let env = match preset {
        "single-correct" => single_correct_env(PlannerAction::SupportiveLaw),
        "two-strategy" => two_strategy_env(),
        other => return Err(format!("unknown preset {other}")),
    };
    let config = TrainConfig {
        seed,
        iterations,
        learning_rate,
        reward: RewardConfig {
            alpha,
            step_penalty,
            ..RewardConfig::default()
        },
    };
    let t = train_toy(&env, &config).map_err(|e| e.to_string())?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let ep = env.episode(0, "greedy", &mut rng, |s, _| t.policy.greedy(s));
    let out = CurveOut {
        mean_reward: t.curve.iter().map(|p| p.mean_reward).collect(),
        loss: t.curve.iter().map(|p| p.loss).collect(),
        greedy: ep.steps.iter().map(|s| s.action.as_str().to_string()).collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn metrics(ranked: &str, gold: &str, k: usize) -> Result<String, JsError> {
    metrics_json(ranked, gold, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn group_advantages(rewards: &str, epsilon: f64) -> Result<String, JsError> {
    advantages_json(rewards, epsilon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn training_curve(
    preset: &str,
    seed: u32,
    iterations: usize,
    learning_rate: f64,
    alpha: f64,
    step_penalty: f64,
) -> Result<String, JsError> {
    curve_json(preset, u64::from(seed), iterations, learning_rate, alpha, step_penalty).map_err(|e| JsError::new(&e))
}
