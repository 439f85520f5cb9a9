use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::agents::AgentSettings;
use crate::grpo::RewardConfig;
use crate::metrics::{CategoryThresholds, MissMode};
use crate::orchestrator::MasConfig;
use crate::reranker::RerankConfig;
use crate::retrieval::RetrievalConfig;

pub const CHAT_TOKEN_VAR: &str = "MALR_CHAT_TOKEN";
pub const EMBED_TOKEN_VAR: &str = "MALR_EMBED_TOKEN";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Inference,
    Training,
}

/// Where chat completions come from. A replay file takes precedence over an
/// endpoint; a cache file sits in front of the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatEndpoint {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub replay: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub timeout_secs: u64,
    /// Extra attempts on timeouts, 429 and 5xx.
    pub retries: u32,
}

impl Default for ChatEndpoint {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            replay: None,
            cache: None,
            timeout_secs: 60,
            retries: 3,
        }
    }
}

/// Everything a run needs. Loaded from JSON, then overridden by flags.
/// Credentials are read from the environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Statute embedding store, JSONL or binary.
    pub embeddings: Option<PathBuf>,
    /// Text → vector table used instead of an embedding service.
    pub query_embeddings: Option<PathBuf>,
    pub embed_endpoint: Option<String>,
    pub prompts_dir: Option<PathBuf>,
    /// MAS backbone.
    pub chat: ChatEndpoint,
    /// Final listwise reranker.
    pub reranker: ChatEndpoint,
    pub retrieval: RetrievalConfig,
    pub agents: AgentSettings,
    pub mas: MasConfig,
    pub rerank: RerankConfig,
    pub reward: RewardConfig,
    pub categories: CategoryThresholds,
    pub mode: Mode,
    pub seed: u64,
    pub rollouts: usize,
    pub jobs: usize,
    pub k: usize,
    pub mrr_mode: MissMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            queries: None,
            embeddings: None,
            query_embeddings: None,
            embed_endpoint: None,
            prompts_dir: None,
            chat: ChatEndpoint::default(),
            reranker: ChatEndpoint::default(),
            retrieval: RetrievalConfig::default(),
            agents: AgentSettings::default(),
            mas: MasConfig::default(),
            rerank: RerankConfig::default(),
            reward: RewardConfig::default(),
            categories: CategoryThresholds::default(),
            mode: Mode::Inference,
            seed: 0,
            rollouts: 1,
            jobs: 1,
            k: 10,
            mrr_mode: MissMode::KPlusOne,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))
    }

    /// Defaults, or the given file.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Value checks; file existence is checked when a file is needed.
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, t) in [
            ("planner_temperature", self.agents.planner_temperature),
            ("rewrite_temperature", self.agents.rewrite_temperature),
            ("rerank temperature", self.rerank.temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(CliError::Usage(format!("{name} {t} outside [0, 2]")));
            }
        }
        if self.jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        if self.rollouts == 0 {
            return Err(CliError::Usage("rollouts must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(CliError::Usage("k must be at least 1".into()));
        }
        self.retrieval.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.reward.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }
}

/// Resolve a required path and make sure it exists.
pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or config file)")))?;
    if !p.exists() {
        return Err(CliError::Data(format!("{what} not found: {}", p.display())));
    }
    Ok(p)
}

pub fn token(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|s| !s.is_empty())
}
