use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::PlannerAction;

pub const N_ACTIONS: usize = PlannerAction::ALL.len();

/// Softmax policy with one logit per (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    n_states: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    /// Uniform policy.
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            logits: vec![0.0; n_states * N_ACTIONS],
        }
    }

    pub fn from_logits(n_states: usize, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), n_states * N_ACTIONS, "logit table has the wrong size");
        Self { n_states, logits }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn state_logits(&self, state: usize) -> &[f64] {
        &self.logits[state * N_ACTIONS..(state + 1) * N_ACTIONS]
    }

    pub fn probs(&self, state: usize) -> [f64; N_ACTIONS] {
        let l = self.state_logits(state);
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = [0.0; N_ACTIONS];
        let mut z = 0.0;
        for (pi, &li) in p.iter_mut().zip(l) {
            *pi = (li - m).exp();
            z += *pi;
        }
        for pi in &mut p {
            *pi /= z;
        }
        p
    }

    pub fn log_prob(&self, state: usize, action: PlannerAction) -> f64 {
        let l = self.state_logits(state);
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        l[action.index()] - lse
    }

    pub fn sample(&self, state: usize, rng: &mut impl Rng) -> PlannerAction {
        let p = self.probs(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return PlannerAction::ALL[i];
            }
        }
        PlannerAction::ALL[N_ACTIONS - 1]
    }

    pub fn greedy(&self, state: usize) -> PlannerAction {
        let l = self.state_logits(state);
        let mut best = 0;
        for i in 1..N_ACTIONS {
            if l[i] > l[best] {
                best = i;
            }
        }
        PlannerAction::ALL[best]
    }
}
