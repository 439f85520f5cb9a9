//! Prompt templates and rendering.
//!
//! Templates ship under `prompts/<version>/` and are compiled in; a
//! directory with files of the same names overrides any of them at runtime.
//! Placeholders are written `{{name}}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AbnormalityDiagnosis, AgentError, AgentRole, AgentSettings, ChatRequest, PlannerAction};

pub const PROMPT_VERSION: &str = "v1";

/// Below this many new candidates in the latest round, the planner prompt
/// reports weak growth.
pub const WEAK_GROWTH_THRESHOLD: usize = 3;

macro_rules! template {
    ($name:literal) => {
        include_str!(concat!("../../prompts/v1/", $name, ".txt"))
    };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub planner_system: String,
    pub planner_user: String,
    pub single_element: String,
    pub supplementary_element: String,
    pub multi_element_decomposition: String,
    pub supportive_law: String,
    pub abnormality_analyzer: String,
    pub abnormality_rewriter: String,
    pub rewrite_user: String,
    pub rerank_system: String,
    pub rerank_user: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            planner_system: template!("planner_system").into(),
            planner_user: template!("planner_user").into(),
            single_element: template!("single_element").into(),
            supplementary_element: template!("supplementary_element").into(),
            multi_element_decomposition: template!("multi_element_decomposition").into(),
            supportive_law: template!("supportive_law").into(),
            abnormality_analyzer: template!("abnormality_analyzer").into(),
            abnormality_rewriter: template!("abnormality_rewriter").into(),
            rewrite_user: template!("rewrite_user").into(),
            rerank_system: template!("rerank_system").into(),
            rerank_user: template!("rerank_user").into(),
        }
    }
}

impl PromptSet {
    /// Built-in templates, with any `<name>.txt` found in `dir` taking
    /// precedence.
    pub fn with_overrides(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let mut set = Self::default();
        let slots: [(&str, &mut String); 11] = [
            ("planner_system", &mut set.planner_system),
            ("planner_user", &mut set.planner_user),
            ("single_element", &mut set.single_element),
            ("supplementary_element", &mut set.supplementary_element),
            ("multi_element_decomposition", &mut set.multi_element_decomposition),
            ("supportive_law", &mut set.supportive_law),
            ("abnormality_analyzer", &mut set.abnormality_analyzer),
            ("abnormality_rewriter", &mut set.abnormality_rewriter),
            ("rewrite_user", &mut set.rewrite_user),
            ("rerank_system", &mut set.rerank_system),
            ("rerank_user", &mut set.rerank_user),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }

    pub fn system_prompt(&self, role: AgentRole) -> &str {
        match role {
            AgentRole::Planner => &self.planner_system,
            AgentRole::SingleElement => &self.single_element,
            AgentRole::SupplementaryElement => &self.supplementary_element,
            AgentRole::MultiElementDecomposition => &self.multi_element_decomposition,
            AgentRole::SupportiveLaw => &self.supportive_law,
            AgentRole::SemanticAbnormalityAnalyzer => &self.abnormality_analyzer,
            AgentRole::SemanticAbnormalityRewriter => &self.abnormality_rewriter,
        }
    }
}

/// Replace every `{{key}}` in `template`.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

/// What the planner sees each iteration. Holds counts and titles only; gold
/// labels are not reachable from here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerContext {
    pub query: String,
    /// 1-based planner iteration about to run.
    pub iteration: usize,
    pub max_rewrite_iterations: usize,
    pub actions: Vec<PlannerAction>,
    /// New unique candidates contributed by each finished iteration.
    pub growth: Vec<usize>,
    pub pool_size: usize,
    pub top_titles: Vec<String>,
    /// The retrieval budget is spent and the only valid answer is exit.
    pub must_exit: bool,
}

impl PlannerContext {
    pub fn no_retrieval_yet(&self) -> bool {
        self.pool_size == 0
    }

    pub fn weak_growth(&self) -> bool {
        self.growth.len() >= 2 && self.growth.last().is_some_and(|&g| g < WEAK_GROWTH_THRESHOLD)
    }

    pub fn pool_status(&self) -> String {
        if self.no_retrieval_yet() {
            "no retrieval yet".into()
        } else if self.weak_growth() {
            format!(
                "weak growth: the last round added only {} new candidates",
                self.growth.last().copied().unwrap_or(0)
            )
        } else {
            "growing".into()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteContext {
    pub query: String,
    pub prior_rewrites: Vec<String>,
    pub diagnosis: Option<AbnormalityDiagnosis>,
}

pub enum AgentContext<'a> {
    Planner(&'a PlannerContext),
    Rewrite(&'a RewriteContext),
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Assemble the chat request for `role`. Pure string assembly.
pub fn render_prompt(
    prompts: &PromptSet,
    settings: &AgentSettings,
    role: AgentRole,
    ctx: AgentContext<'_>,
) -> Result<ChatRequest, AgentError> {
    let system_prompt = prompts.system_prompt(role).to_string();
    match (role, ctx) {
        (AgentRole::Planner, AgentContext::Planner(c)) => {
            if c.query.trim().is_empty() {
                return Err(AgentError::MissingContextField("query"));
            }
            if c.iteration == 0 {
                return Err(AgentError::MissingContextField("iteration"));
            }
            let actions = if c.actions.is_empty() {
                "(none)".to_string()
            } else {
                c.actions.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
            };
            let growth = format!(
                "[{}]",
                c.growth.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
            );
            let constraint = if c.must_exit {
                "The retrieval budget is exhausted. You must choose exit.\n"
            } else {
                ""
            };
            let user_prompt = fill(
                &prompts.planner_user,
                &[
                    ("query", &c.query),
                    ("iteration", &c.iteration.to_string()),
                    ("max_rewrite_iterations", &c.max_rewrite_iterations.to_string()),
                    ("actions", &actions),
                    ("growth", &growth),
                    ("pool_size", &c.pool_size.to_string()),
                    ("pool_status", &c.pool_status()),
                    ("top_titles", &bullet_list(&c.top_titles)),
                    ("constraint", constraint),
                ],
            );
            Ok(ChatRequest {
                system_prompt,
                user_prompt,
                temperature: settings.planner_temperature,
                max_tokens: settings.planner_max_tokens,
            })
        }
        (AgentRole::Planner, AgentContext::Rewrite(_)) => Err(AgentError::MissingContextField("planner context")),
        (_, AgentContext::Planner(_)) => Err(AgentError::MissingContextField("rewrite context")),
        (role, AgentContext::Rewrite(c)) => {
            if c.query.trim().is_empty() {
                return Err(AgentError::MissingContextField("query"));
            }
            let diagnosis = match (&c.diagnosis, role) {
                (Some(d), AgentRole::SemanticAbnormalityRewriter) => {
                    format!("\nDiagnosis: {}: {}\n", d.anomaly_type, d.explanation)
                }
                (None, AgentRole::SemanticAbnormalityRewriter) => "\nDiagnosis: (unavailable)\n".to_string(),
                _ => String::new(),
            };
            let user_prompt = fill(
                &prompts.rewrite_user,
                &[
                    ("query", &c.query),
                    ("prior", &bullet_list(&c.prior_rewrites)),
                    ("diagnosis", &diagnosis),
                ],
            );
            Ok(ChatRequest {
                system_prompt,
                user_prompt,
                temperature: settings.rewrite_temperature,
                max_tokens: settings.rewrite_max_tokens,
            })
        }
    }
}
