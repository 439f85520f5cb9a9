//! Simulated retrieval environment for the toy policy.
//!
//! Each archetype has a hidden gold set and a table saying which gold items
//! each rewrite action retrieves. Every retrieval call fills the rest of its
//! ten slots with distractors. Episodes are produced as ordinary
//! [`Trajectory`] values so the reward code runs on them unchanged.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::agents::{PlannerAction, PlannerDecision};
use crate::corpus::GoldSet;
use crate::orchestrator::{
    CandidatePool, IterationRecord, MasConfig, Termination, Trajectory, TRAJECTORY_SCHEMA_VERSION,
};
use crate::retrieval::RetrievalHit;

/// Coverage buckets: none, under half, partial, complete.
pub const COVERAGE_BUCKETS: usize = 4;
pub const SLOTS_PER_CALL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionEffect {
    /// Indices into the archetype's gold set.
    #[serde(default)]
    pub gold: Vec<usize>,
    #[serde(default = "one")]
    pub reformulations: usize,
    /// Chance that each listed gold item is missed on a given call.
    #[serde(default)]
    pub noise: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub name: String,
    pub gold_size: usize,
    /// Rewrite actions absent from the table retrieve no gold.
    #[serde(default)]
    pub actions: BTreeMap<PlannerAction, ActionEffect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimEnv {
    pub archetypes: Vec<Archetype>,
    #[serde(default)]
    pub max_rewrite_iterations: Option<usize>,
}

/// One planner choice made by the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub state: usize,
    pub action: PlannerAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub archetype: usize,
    pub steps: Vec<PolicyStep>,
    pub trajectory: Trajectory,
}

impl SimEnv {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.archetypes.is_empty() {
            return Err(GrpoError::InvalidEnv("no archetypes".into()));
        }
        for a in &self.archetypes {
            if a.gold_size == 0 {
                return Err(GrpoError::InvalidEnv(format!("archetype {:?} has no gold", a.name)));
            }
            for (action, e) in &a.actions {
                if *action == PlannerAction::Exit {
                    return Err(GrpoError::InvalidEnv(format!(
                        "archetype {:?} gives exit an effect",
                        a.name
                    )));
                }
                if e.gold.iter().any(|&g| g >= a.gold_size) {
                    return Err(GrpoError::InvalidEnv(format!(
                        "archetype {:?}: gold index out of range",
                        a.name
                    )));
                }
                if e.reformulations == 0 {
                    return Err(GrpoError::InvalidEnv(format!(
                        "archetype {:?}: zero reformulations",
                        a.name
                    )));
                }
                if !(0.0..=1.0).contains(&e.noise) {
                    return Err(GrpoError::InvalidEnv(format!(
                        "archetype {:?}: noise outside [0, 1]",
                        a.name
                    )));
                }
                if e.gold.len() > e.reformulations * SLOTS_PER_CALL {
                    return Err(GrpoError::InvalidEnv(format!(
                        "archetype {:?}: more gold than slots",
                        a.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mas_config(&self) -> MasConfig {
        MasConfig {
            max_rewrite_iterations: self.max_rewrite_iterations.unwrap_or(4),
            ..MasConfig::default()
        }
    }

    fn max_planner_iterations(&self) -> usize {
        self.mas_config().max_planner_iterations()
    }

    pub fn n_states(&self) -> usize {
        self.archetypes.len() * self.max_planner_iterations() * COVERAGE_BUCKETS
    }

    pub fn gold(&self, archetype: usize) -> GoldSet {
        (0..self.archetypes[archetype].gold_size)
            .map(|j| gold_id(archetype, j))
            .collect()
    }

    /// `iteration` is 1-based.
    pub fn state(&self, archetype: usize, iteration: usize, covered: usize) -> usize {
        let gold = self.archetypes[archetype].gold_size;
        let bucket = if covered == 0 {
            0
        } else if covered >= gold {
            3
        } else if 2 * covered < gold {
            1
        } else {
            2
        };
        (archetype * self.max_planner_iterations() + (iteration - 1)) * COVERAGE_BUCKETS + bucket
    }

    /// Roll out one episode. `choose` picks the planner action for a state;
    /// the final iteration is a forced exit and asks nothing.
    pub fn episode<R: Rng>(
        &self,
        archetype: usize,
        trajectory_id: &str,
        rng: &mut R,
        mut choose: impl FnMut(usize, &mut R) -> PlannerAction,
    ) -> Episode {
        let arch = &self.archetypes[archetype];
        let gold = self.gold(archetype);
        let mut pool = CandidatePool::new();
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut steps = Vec::new();
        let mut covered = 0usize;
        let mut retrieved = false;
        let cap = self.max_planner_iterations();
        let mut distractor = 0usize;

        let terminated_by = loop {
            let index = records.len() + 1;
            if index == cap {
                records.push(exit_record(index, true));
                break Termination::IterationCap;
            }
            let state = self.state(archetype, index, covered);
            let action = choose(state, rng);
            steps.push(PolicyStep { state, action });
            if action == PlannerAction::Exit {
                records.push(exit_record(index, false));
                break if retrieved {
                    Termination::ExitAction
                } else {
                    Termination::InvalidEarlyExit
                };
            }

            let effect = arch.actions.get(&action);
            let calls = effect.map_or(1, |e| e.reformulations);
            let mut found: Vec<usize> = Vec::new();
            if let Some(e) = effect {
                for &g in &e.gold {
                    if e.noise == 0.0 || rng.random::<f64>() >= e.noise {
                        found.push(g);
                    }
                }
            }
            let mut new_ids = Vec::new();
            let reformulations: Vec<String> = (0..calls).map(|c| format!("{}#{index}.{c}", action.as_str())).collect();
            for (c, source) in reformulations.iter().enumerate() {
                let mine: Vec<usize> = found.iter().copied().skip(c).step_by(calls).collect();
                let mut hits: Vec<RetrievalHit> = mine.iter().map(|&g| hit(gold_id(archetype, g), 0.9)).collect();
                while hits.len() < SLOTS_PER_CALL {
                    hits.push(hit(format!("d{archetype}_{distractor}"), 0.1));
                    distractor += 1;
                }
                new_ids.extend(pool.merge(&hits, index, source));
            }
            retrieved = true;
            let new_gold = new_ids.iter().filter(|id| gold.contains(id)).count();
            covered += new_gold;
            records.push(IterationRecord {
                index,
                decision: PlannerDecision {
                    action,
                    reason: "sampled".into(),
                },
                overridden: None,
                reformulations,
                diagnosis: None,
                retrieval_calls: calls,
                new_unique: new_ids.len(),
                new_ids,
                new_gold: Some(new_gold),
                skipped: false,
            });
        };

        Episode {
            archetype,
            steps,
            trajectory: Trajectory {
                schema_version: TRAJECTORY_SCHEMA_VERSION,
                query_id: arch.name.clone(),
                trajectory_id: trajectory_id.to_string(),
                records,
                terminated_by,
                error: None,
                pool,
            },
        }
    }
}

fn gold_id(archetype: usize, j: usize) -> String {
    format!("g{archetype}_{j}")
}

fn hit(id: String, score: f64) -> RetrievalHit {
    RetrievalHit {
        statute_id: id,
        similarity: score,
        score,
        rank: 0,
    }
}

fn exit_record(index: usize, forced: bool) -> IterationRecord {
    IterationRecord {
        index,
        decision: PlannerDecision {
            action: PlannerAction::Exit,
            reason: if forced { "iteration cap" } else { "sampled" }.into(),
        },
        overridden: None,
        reformulations: vec![],
        diagnosis: None,
        retrieval_calls: 0,
        new_unique: 0,
        new_ids: vec![],
        new_gold: Some(0),
        skipped: false,
    }
}

/// One action always finds the single gold statute; nothing else does.
pub fn single_correct_env(correct: PlannerAction) -> SimEnv {
    SimEnv {
        archetypes: vec![Archetype {
            name: "single".into(),
            gold_size: 1,
            actions: [(
                correct,
                ActionEffect {
                    gold: vec![0],
                    reformulations: 1,
                    noise: 0.0,
                },
            )]
            .into_iter()
            .collect(),
        }],
        max_rewrite_iterations: None,
    }
}

/// Three gold statutes: decomposition finds all of them in one iteration,
/// three single-purpose actions find one each.
pub fn two_strategy_env() -> SimEnv {
    let one = |g: usize| ActionEffect {
        gold: vec![g],
        reformulations: 1,
        noise: 0.0,
    };
    SimEnv {
        archetypes: vec![Archetype {
            name: "multi".into(),
            gold_size: 3,
            actions: [
                (
                    PlannerAction::MultiElementDecomposition,
                    ActionEffect {
                        gold: vec![0, 1, 2],
                        reformulations: 3,
                        noise: 0.0,
                    },
                ),
                (PlannerAction::SingleElement, one(0)),
                (PlannerAction::SupplementaryElement, one(1)),
                (PlannerAction::SupportiveLaw, one(2)),
            ]
            .into_iter()
            .collect(),
        }],
        max_rewrite_iterations: None,
    }
}
