//! Statute retrieval with planner-driven multi-agent query reformulation,
//! dense retrieval, listwise LLM reranking, ranking metrics and a
//! group-normalized policy-gradient toolkit.

pub mod agents;
pub mod corpus;
pub mod grpo;
pub mod metrics;
pub mod orchestrator;
pub mod reranker;
pub mod retrieval;

#[cfg(feature = "cli")]
pub mod cli;
