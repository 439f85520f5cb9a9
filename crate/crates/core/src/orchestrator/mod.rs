//! The planner-driven reformulation loop.
//!
//! Each iteration asks the planner for an action, runs the matching rewrite
//! agent, retrieves once per reformulation and merges the hits into a shared
//! pool. At most `max_rewrite_iterations` rewrite rounds run; the next planner
//! turn is told to exit and is overridden if it does not.

mod log;
mod pool;

pub use log::{load_trajectory_log, read_trajectory_log, write_trajectory_log, LogLine, TrajectoryLogWriter};
pub use pool::{merge_dedup, CandidatePool, PoolEntry};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AbnormalityDiagnosis, AgentError, Agents, PlannerAction, PlannerContext, PlannerDecision, RewriteContext,
};
use crate::corpus::{Corpus, GoldSet};
use crate::retrieval::{RetrievalError, RetrievalHit, Retriever};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("query {query_id}: agent failure: {source}")]
    Agent {
        query_id: String,
        #[source]
        source: AgentError,
    },
    #[error("query {query_id}: retrieval failure: {source}")]
    Retrieval {
        query_id: String,
        #[source]
        source: RetrievalError,
    },
    #[error("retrieved id {0:?} is not in the corpus")]
    UnknownStatute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasConfig {
    pub max_rewrite_iterations: usize,
    /// Titles of this many top candidates go into the planner prompt.
    pub context_titles: usize,
}

impl Default for MasConfig {
    fn default() -> Self {
        Self {
            max_rewrite_iterations: 4,
            context_titles: 10,
        }
    }
}

impl MasConfig {
    pub fn max_planner_iterations(&self) -> usize {
        self.max_rewrite_iterations + 1
    }
}

/// Gold labels are only reachable in training mode.
#[derive(Debug, Clone, Copy)]
pub enum RunMode<'g> {
    Inference,
    Training(&'g GoldSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ExitAction,
    IterationCap,
    InvalidEarlyExit,
    /// A provider error stopped the run after at least one retrieval.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: usize,
    /// The action that was executed.
    pub decision: PlannerDecision,
    /// What the planner asked for when the loop replaced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overridden: Option<PlannerAction>,
    pub reformulations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<AbnormalityDiagnosis>,
    pub retrieval_calls: usize,
    pub new_unique: usize,
    pub new_ids: Vec<String>,
    /// Gold statutes first entering the pool here. Training mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_gold: Option<usize>,
    /// The rewrite failed and the iteration ran no retrieval.
    #[serde(default)]
    pub skipped: bool,
}

impl IterationRecord {
    pub fn is_exit(&self) -> bool {
        self.decision.action == PlannerAction::Exit
    }

    pub fn is_rewrite(&self) -> bool {
        !self.is_exit()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub query_id: String,
    pub trajectory_id: String,
    pub records: Vec<IterationRecord>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pool: CandidatePool,
}

impl Trajectory {
    pub fn retrieval_calls(&self) -> usize {
        self.records.iter().map(|r| r.retrieval_calls).sum()
    }

    pub fn rewrite_records(&self) -> usize {
        self.records.iter().filter(|r| r.is_rewrite()).count()
    }

    pub fn is_training(&self) -> bool {
        self.records.iter().all(|r| r.new_gold.is_some()) && !self.records.is_empty()
    }

    /// Structural invariants. Returns the first violation.
    pub fn check(&self, config: &MasConfig) -> Result<(), String> {
        if self.records.len() > config.max_planner_iterations() {
            return Err(format!("{} records exceed the cap", self.records.len()));
        }
        if self.rewrite_records() > config.max_rewrite_iterations {
            return Err(format!("{} rewrite records exceed the cap", self.rewrite_records()));
        }
        let exits = self.records.iter().filter(|r| r.is_exit()).count();
        if exits > 1 || (exits == 1 && !self.records.last().is_some_and(IterationRecord::is_exit)) {
            return Err("exit record is not unique and last".into());
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.index != i + 1 {
                return Err(format!("record {} has index {}", i + 1, r.index));
            }
            let expected = if r.is_exit() || r.skipped {
                0
            } else {
                r.reformulations.len()
            };
            if r.retrieval_calls != expected {
                return Err(format!(
                    "record {} has {} calls, expected {expected}",
                    r.index, r.retrieval_calls
                ));
            }
        }
        let new_total: usize = self.records.iter().map(|r| r.new_unique).sum();
        if new_total != self.pool.len() {
            return Err("new_unique counts do not add up to the pool size".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub retrieval_calls: usize,
    pub embedding_candidates: usize,
    pub pool_size: usize,
}

impl BudgetReport {
    pub fn check(&self, dense_k: usize, pruned_k: usize) -> Result<(), String> {
        if self.embedding_candidates != dense_k * self.retrieval_calls {
            return Err(format!(
                "embedding_candidates {} != {dense_k} x {}",
                self.embedding_candidates, self.retrieval_calls
            ));
        }
        if self.pool_size > pruned_k * self.retrieval_calls {
            return Err(format!(
                "pool {} > {pruned_k} x {}",
                self.pool_size, self.retrieval_calls
            ));
        }
        Ok(())
    }
}

pub fn budget(trajectory: &Trajectory, dense_k: usize) -> BudgetReport {
    let calls = trajectory.retrieval_calls();
    BudgetReport {
        retrieval_calls: calls,
        embedding_candidates: dense_k * calls,
        pool_size: trajectory.pool.len(),
    }
}

/// Planner view of the run so far. Counts and titles only.
pub fn context_summary(
    query_text: &str,
    records: &[IterationRecord],
    pool: &CandidatePool,
    corpus: &Corpus,
    config: &MasConfig,
) -> PlannerContext {
    let top_titles = pool
        .ranked()
        .into_iter()
        .take(config.context_titles)
        .map(|e| corpus.title_of(&e.statute_id).to_string())
        .collect();
    PlannerContext {
        query: query_text.to_string(),
        iteration: records.len() + 1,
        max_rewrite_iterations: config.max_rewrite_iterations,
        actions: records.iter().map(|r| r.decision.action).collect(),
        growth: records.iter().map(|r| r.new_unique).collect(),
        pool_size: pool.len(),
        top_titles,
        must_exit: records.len() + 1 >= config.max_planner_iterations(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasRun {
    pub trajectory: Trajectory,
    pub budget: BudgetReport,
}

impl MasRun {
    pub fn pool(&self) -> &CandidatePool {
        &self.trajectory.pool
    }
}

/// Retrieve for every reformulation; several run on scoped threads. Results
/// come back in reformulation order.
fn retrieve_all(
    retriever: &Retriever<'_>,
    reformulations: &[String],
) -> Vec<Result<Vec<RetrievalHit>, RetrievalError>> {
    if reformulations.len() <= 1 {
        return reformulations.iter().map(|r| retriever.retrieve(r)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = reformulations
            .iter()
            .map(|r| s.spawn(move || retriever.retrieve(r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("retrieval thread panicked"))
            .collect()
    })
}

pub struct MasRunner<'a> {
    pub agents: &'a Agents<'a>,
    pub retriever: Retriever<'a>,
    pub corpus: &'a Corpus,
    pub config: MasConfig,
}

impl<'a> MasRunner<'a> {
    pub fn new(agents: &'a Agents<'a>, retriever: Retriever<'a>, corpus: &'a Corpus, config: MasConfig) -> Self {
        Self {
            agents,
            retriever,
            corpus,
            config,
        }
    }

    pub fn run(&self, query_id: &str, query_text: &str, mode: RunMode<'_>) -> Result<MasRun, OrchestratorError> {
        self.run_with_id(query_id, &format!("{query_id}#0"), query_text, mode)
    }

    pub fn run_with_id(
        &self,
        query_id: &str,
        trajectory_id: &str,
        query_text: &str,
        mode: RunMode<'_>,
    ) -> Result<MasRun, OrchestratorError> {
        let mut pool = CandidatePool::new();
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut prior: Vec<String> = Vec::new();
        let mut retrieved_once = false;

        let finish = |records, pool, terminated_by, error| {
            let trajectory = Trajectory {
                schema_version: TRAJECTORY_SCHEMA_VERSION,
                query_id: query_id.to_string(),
                trajectory_id: trajectory_id.to_string(),
                records,
                terminated_by,
                error,
                pool,
            };
            let budget = budget(&trajectory, self.retriever.config.dense_k);
            Ok(MasRun { trajectory, budget })
        };
        // Provider errors abort; a partial pool survives only if something
        // was retrieved.
        macro_rules! abort {
            ($err:expr, $wrap:ident) => {{
                let err = $err;
                if retrieved_once {
                    tracing::warn!(query_id, error = %err, "run aborted; keeping partial pool");
                    return finish(records, pool, Termination::Aborted, Some(err.to_string()));
                }
                return Err(OrchestratorError::$wrap {
                    query_id: query_id.to_string(),
                    source: err,
                });
            }};
        }

        loop {
            let index = records.len() + 1;
            let ctx = context_summary(query_text, &records, &pool, self.corpus, &self.config);
            let proposed = match self.agents.decide(&ctx) {
                Ok(d) => d,
                Err(e) => abort!(e, Agent),
            };
            let mut decision = proposed.clone();
            let mut overridden = None;

            if ctx.must_exit && decision.action != PlannerAction::Exit {
                overridden = Some(decision.action);
                decision = PlannerDecision {
                    action: PlannerAction::Exit,
                    reason: format!("iteration cap reached; planner proposed {}", proposed.action),
                };
            } else if decision.action == PlannerAction::Exit && !retrieved_once {
                match mode {
                    RunMode::Training(_) => {
                        records.push(IterationRecord {
                            index,
                            decision,
                            overridden: None,
                            reformulations: vec![],
                            diagnosis: None,
                            retrieval_calls: 0,
                            new_unique: 0,
                            new_ids: vec![],
                            new_gold: Some(0),
                            skipped: false,
                        });
                        return finish(records, pool, Termination::InvalidEarlyExit, None);
                    }
                    RunMode::Inference => {
                        overridden = Some(PlannerAction::Exit);
                        decision = PlannerDecision {
                            action: PlannerAction::SingleElement,
                            reason: "exit before any retrieval replaced by single_element".into(),
                        };
                    }
                }
            }

            if decision.action == PlannerAction::Exit {
                let terminated_by = if overridden.is_some() {
                    Termination::IterationCap
                } else {
                    Termination::ExitAction
                };
                records.push(IterationRecord {
                    index,
                    decision,
                    overridden,
                    reformulations: vec![],
                    diagnosis: None,
                    retrieval_calls: 0,
                    new_unique: 0,
                    new_ids: vec![],
                    new_gold: matches!(mode, RunMode::Training(_)).then_some(0),
                    skipped: false,
                });
                return finish(records, pool, terminated_by, None);
            }

            let rw_ctx = RewriteContext {
                query: query_text.to_string(),
                prior_rewrites: prior.clone(),
                diagnosis: None,
            };
            let output = match self.agents.run_action(decision.action, &rw_ctx) {
                Ok(o) => Some(o),
                Err(AgentError::EmptyRewrite(role)) => {
                    tracing::info!(query_id, %role, "rewrite unusable; skipping iteration");
                    None
                }
                Err(e) => abort!(e, Agent),
            };

            let mut record = IterationRecord {
                index,
                decision,
                overridden,
                reformulations: vec![],
                diagnosis: None,
                retrieval_calls: 0,
                new_unique: 0,
                new_ids: vec![],
                new_gold: None,
                skipped: output.is_none(),
            };
            if let Some(output) = output {
                let results = retrieve_all(&self.retriever, &output.reformulations);
                let mut batches = Vec::with_capacity(results.len());
                for r in results {
                    match r {
                        Ok(hits) => batches.push(hits),
                        Err(e) => abort!(e, Retrieval),
                    }
                }
                for (reformulation, hits) in output.reformulations.iter().zip(&batches) {
                    if let Some(h) = hits.iter().find(|h| !self.corpus.contains(&h.statute_id)) {
                        return Err(OrchestratorError::UnknownStatute(h.statute_id.clone()));
                    }
                    record.new_ids.extend(pool.merge(hits, index, reformulation));
                }
                retrieved_once = true;
                record.retrieval_calls = output.reformulations.len();
                record.new_unique = record.new_ids.len();
                prior.extend(output.reformulations.iter().cloned());
                record.reformulations = output.reformulations;
                record.diagnosis = output.diagnosis;
            }
            if let RunMode::Training(gold) = mode {
                record.new_gold = Some(record.new_ids.iter().filter(|id| gold.contains(id)).count());
            }
            records.push(record);
        }
    }
}
