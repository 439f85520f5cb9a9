//! Planner and rewrite agents.
//!
//! Each agent is a prompt template plus a parser for its structured reply.
//! The LLM sits behind [`ChatClient`], so the rest of the pipeline runs
//! unchanged against live endpoints, scripted mocks or recorded fixtures.

mod client;
mod parse;
mod prompts;

#[cfg(feature = "http")]
pub use client::HttpChatClient;
pub use client::{
    read_fixtures, request_hash, write_fixtures, BudgetedClient, CachingClient, ChatClient, ChatError, FixtureRecord,
    FnClient, RecordingClient, ReplayClient, ScriptedClient,
};
pub use parse::{
    extract_first_json_object, parse_diagnosis, parse_planner_decision, parse_rewrites, ParseError, MISSING_REASON,
};
pub use prompts::{
    fill, render_prompt, AgentContext, PlannerContext, PromptSet, RewriteContext, PROMPT_VERSION, WEAK_GROWTH_THRESHOLD,
};

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Planner,
    SingleElement,
    SupplementaryElement,
    MultiElementDecomposition,
    SupportiveLaw,
    SemanticAbnormalityAnalyzer,
    SemanticAbnormalityRewriter,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Planner => "planner",
            Self::SingleElement => "single_element",
            Self::SupplementaryElement => "supplementary_element",
            Self::MultiElementDecomposition => "multi_element_decomposition",
            Self::SupportiveLaw => "supportive_law",
            Self::SemanticAbnormalityAnalyzer => "semantic_abnormality_analyzer",
            Self::SemanticAbnormalityRewriter => "semantic_abnormality_rewriter",
        }
    }

    /// Only decomposition may return more than one reformulation.
    pub fn allows_multiple(self) -> bool {
        self == Self::MultiElementDecomposition
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerAction {
    SingleElement,
    SupplementaryElement,
    MultiElementDecomposition,
    SupportiveLaw,
    SemanticAbnormality,
    Exit,
}

impl PlannerAction {
    pub const ALL: [PlannerAction; 6] = [
        Self::SingleElement,
        Self::SupplementaryElement,
        Self::MultiElementDecomposition,
        Self::SupportiveLaw,
        Self::SemanticAbnormality,
        Self::Exit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SingleElement => "single_element",
            Self::SupplementaryElement => "supplementary_element",
            Self::MultiElementDecomposition => "multi_element_decomposition",
            Self::SupportiveLaw => "supportive_law",
            Self::SemanticAbnormality => "semantic_abnormality",
            Self::Exit => "exit",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).expect("action listed in ALL")
    }

    /// The agent that produces the reformulation. Semantic abnormality
    /// starts with the analyzer; exit has none.
    pub fn rewrite_role(self) -> Option<AgentRole> {
        match self {
            Self::SingleElement => Some(AgentRole::SingleElement),
            Self::SupplementaryElement => Some(AgentRole::SupplementaryElement),
            Self::MultiElementDecomposition => Some(AgentRole::MultiElementDecomposition),
            Self::SupportiveLaw => Some(AgentRole::SupportiveLaw),
            Self::SemanticAbnormality => Some(AgentRole::SemanticAbnormalityAnalyzer),
            Self::Exit => None,
        }
    }
}

impl fmt::Display for PlannerAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| {
                if c == '-' || c == ' ' {
                    '_'
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect();
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerDecision {
    pub action: PlannerAction,
    pub reason: String,
}

impl PlannerDecision {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteOutput {
    pub reformulations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbnormalityDiagnosis {
    pub anomaly_type: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub planner_temperature: f64,
    pub rewrite_temperature: f64,
    pub planner_max_tokens: u32,
    pub rewrite_max_tokens: u32,
    /// Extra attempts after an unparseable reply.
    pub parse_retries: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            planner_temperature: 0.6,
            rewrite_temperature: 0.8,
            planner_max_tokens: 512,
            rewrite_max_tokens: 1024,
            parse_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("unparseable reply: {0}")]
    Parse(#[from] ParseError),
    #[error("agent {0} produced no usable reformulation")]
    EmptyRewrite(AgentRole),
    #[error("missing context field {0:?}")]
    MissingContextField(&'static str),
}

const FORMAT_REMINDER: &str = "\n\nYour previous reply could not be parsed. Follow the required output format exactly.";

/// Reformulations for one planner action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutput {
    pub reformulations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<AbnormalityDiagnosis>,
}

/// Drives the planner and rewrite agents over one chat client.
pub struct Agents<'a> {
    client: &'a dyn ChatClient,
    prompts: &'a PromptSet,
    settings: AgentSettings,
    calls: AtomicUsize,
}

impl<'a> Agents<'a> {
    pub fn new(client: &'a dyn ChatClient, prompts: &'a PromptSet, settings: AgentSettings) -> Self {
        Self {
            client,
            prompts,
            settings,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn settings(&self) -> &AgentSettings {
        &self.settings
    }

    /// Chat calls issued so far, retries included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn call(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.client.chat(request)
    }

    /// Call and parse, re-asking with a format reminder on parse failure.
    /// Returns the last parse error once retries run out.
    fn call_parsed<T>(
        &self,
        mut request: ChatRequest,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<Result<T, ParseError>, ChatError> {
        let mut last = ParseError::NoJson;
        for attempt in 0..=self.settings.parse_retries {
            if attempt == 1 {
                request.user_prompt.push_str(FORMAT_REMINDER);
            }
            let reply = self.call(&request)?;
            match parse(&reply) {
                Ok(v) => return Ok(Ok(v)),
                Err(e) => {
                    tracing::debug!(error = %e, attempt, "agent reply rejected");
                    last = e;
                }
            }
        }
        Ok(Err(last))
    }

    /// Next planner action. A reply that never parses becomes
    /// `single_element`, never `exit`.
    pub fn decide(&self, ctx: &PlannerContext) -> Result<PlannerDecision, AgentError> {
        let request = render_prompt(
            self.prompts,
            &self.settings,
            AgentRole::Planner,
            AgentContext::Planner(ctx),
        )?;
        match self.call_parsed(request, parse_planner_decision)? {
            Ok(d) => Ok(d),
            Err(e) => {
                tracing::warn!(error = %e, "planner reply unparseable; defaulting to single_element");
                Ok(PlannerDecision {
                    action: PlannerAction::SingleElement,
                    reason: format!("fallback after unparseable planner reply: {e}"),
                })
            }
        }
    }

    /// One rewrite agent. Single-output roles that keep returning several
    /// reformulations are cut to the first.
    pub fn rewrite(&self, role: AgentRole, ctx: &RewriteContext) -> Result<RewriteOutput, AgentError> {
        let request = render_prompt(self.prompts, &self.settings, role, AgentContext::Rewrite(ctx))?;
        match self.call_parsed(request, |t| parse_rewrites(t, role))? {
            Ok(out) => Ok(out),
            Err(ParseError::Cardinality { .. }) => {
                let mut out = self
                    .call_parsed(
                        render_prompt(self.prompts, &self.settings, role, AgentContext::Rewrite(ctx))?,
                        |t| parse_rewrites(t, AgentRole::MultiElementDecomposition),
                    )?
                    .map_err(|_| AgentError::EmptyRewrite(role))?;
                out.reformulations.truncate(1);
                Ok(out)
            }
            Err(_) => Err(AgentError::EmptyRewrite(role)),
        }
    }

    /// Analyzer then rewriter. If the analyzer fails the rewriter still runs,
    /// without a diagnosis.
    pub fn semantic_abnormality(
        &self,
        ctx: &RewriteContext,
    ) -> Result<(Option<AbnormalityDiagnosis>, RewriteOutput), AgentError> {
        let request = render_prompt(
            self.prompts,
            &self.settings,
            AgentRole::SemanticAbnormalityAnalyzer,
            AgentContext::Rewrite(ctx),
        )?;
        let diagnosis = match self.call_parsed(request, parse_diagnosis)? {
            Ok(d) => Some(d),
            Err(e) => {
                tracing::warn!(error = %e, "abnormality analysis failed; rewriting without diagnosis");
                None
            }
        };
        let rewriter_ctx = RewriteContext {
            diagnosis: diagnosis.clone(),
            ..ctx.clone()
        };
        let out = self.rewrite(AgentRole::SemanticAbnormalityRewriter, &rewriter_ctx)?;
        Ok((diagnosis, out))
    }

    /// Reformulations for a non-exit action.
    pub fn run_action(&self, action: PlannerAction, ctx: &RewriteContext) -> Result<ActionOutput, AgentError> {
        match action {
            PlannerAction::Exit => Err(AgentError::MissingContextField("rewrite action")),
            PlannerAction::SemanticAbnormality => {
                let (diagnosis, out) = self.semantic_abnormality(ctx)?;
                Ok(ActionOutput {
                    reformulations: out.reformulations,
                    diagnosis,
                })
            }
            other => {
                let role = other.rewrite_role().expect("non-exit action has a role");
                Ok(ActionOutput {
                    reformulations: self.rewrite(role, ctx)?.reformulations,
                    diagnosis: None,
                })
            }
        }
    }
}
