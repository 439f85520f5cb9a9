//! Zero-shot listwise reranking of the merged pool.
//!
//! Candidates are shown to the model in score order with 0-based indices;
//! the model answers `{"selected_indices": [...]}`. Short or partly invalid
//! selections are padded in score order, and a reply that never parses falls
//! back to score order outright, so the output length is always
//! `min(final_k, pool size)`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{extract_first_json_object, fill, ChatClient, ChatRequest, ParseError, PromptSet};
use crate::corpus::Corpus;
use crate::orchestrator::CandidatePool;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RerankError {
    #[error("cannot rerank an empty candidate pool")]
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub final_k: usize,
    /// Candidate texts longer than this many characters are cut.
    pub text_cap_chars: usize,
    pub parse_retries: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            final_k: 10,
            text_cap_chars: 1200,
            parse_retries: 2,
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

pub const TRUNCATION_MARKER: &str = "…";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub index: usize,
    pub statute_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub query_text: String,
    pub candidates: Vec<RerankCandidate>,
    pub final_k: usize,
}

impl RerankRequest {
    /// Pool entries by best score descending, ties by id. Ids missing from
    /// the corpus are shown with empty text.
    pub fn from_pool(pool: &CandidatePool, corpus: &Corpus, query_text: &str, final_k: usize) -> Self {
        let candidates = pool
            .ranked()
            .into_iter()
            .enumerate()
            .map(|(index, e)| {
                let statute = corpus.get(&e.statute_id);
                RerankCandidate {
                    index,
                    statute_id: e.statute_id.clone(),
                    title: corpus.title_of(&e.statute_id).to_string(),
                    text: statute.map(|s| s.text.clone()).unwrap_or_default(),
                    score: e.best_score,
                }
            })
            .collect();
        Self {
            query_text: query_text.to_string(),
            candidates,
            final_k,
        }
    }

    pub fn output_len(&self) -> usize {
        self.final_k.min(self.candidates.len())
    }

    /// Candidate ids in presentation order, cut to the output length.
    pub fn fallback_ids(&self) -> Vec<String> {
        self.candidates
            .iter()
            .take(self.output_len())
            .map(|c| c.statute_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub ranked_ids: Vec<String>,
    pub used_fallback: bool,
    pub raw_response: String,
}

fn truncate_chars(text: &str, cap: usize) -> String {
    match text.char_indices().nth(cap) {
        Some((byte, _)) => format!("{}{TRUNCATION_MARKER}", &text[..byte]),
        None => text.to_string(),
    }
}

pub fn build_rerank_prompt(prompts: &PromptSet, request: &RerankRequest, config: &RerankConfig) -> ChatRequest {
    let candidates = request
        .candidates
        .iter()
        .map(|c| {
            let text = truncate_chars(&c.text, config.text_cap_chars);
            if c.title.is_empty() || c.title == c.statute_id {
                format!("[{}] score={:.4} {}\n{}", c.index, c.score, c.statute_id, text)
            } else {
                format!(
                    "[{}] score={:.4} {} ({})\n{}",
                    c.index, c.score, c.title, c.statute_id, text
                )
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let user_prompt = fill(
        &prompts.rerank_user,
        &[
            ("query", &request.query_text),
            ("count", &request.candidates.len().to_string()),
            ("candidates", &candidates),
            ("k", &request.output_len().to_string()),
        ],
    );
    ChatRequest {
        system_prompt: prompts.rerank_system.clone(),
        user_prompt,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    }
}

fn first_json_array(text: &str) -> Option<Vec<Value>> {
    text.char_indices().filter(|&(_, c)| c == '[').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => Some(items),
            _ => None,
        }
    })
}

/// Selected indices, cleaned and padded to `min(final_k, n)`.
///
/// Takes `selected_indices` from the first JSON object, or the first bare
/// JSON array when there is no object. Out-of-range, non-integer and
/// repeated entries are dropped; missing slots are filled with unselected
/// indices in ascending order.
pub fn parse_selection(text: &str, n: usize, final_k: usize) -> Result<Vec<usize>, ParseError> {
    let items = match extract_first_json_object(text) {
        Some(obj) => match obj.get("selected_indices") {
            Some(Value::Array(items)) => items.clone(),
            Some(_) => return Err(ParseError::WrongType("selected_indices")),
            None => return Err(ParseError::MissingField("selected_indices")),
        },
        None => first_json_array(text).ok_or(ParseError::NoJson)?,
    };
    let want = final_k.min(n);
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(want);
    for v in items {
        if out.len() == want {
            break;
        }
        let Some(i) = v.as_u64().map(|i| i as usize) else {
            continue;
        };
        if i < n && !taken[i] {
            taken[i] = true;
            out.push(i);
        }
    }
    for (i, t) in taken.iter().enumerate() {
        if out.len() == want {
            break;
        }
        if !t {
            out.push(i);
        }
    }
    Ok(out)
}

const FORMAT_REMINDER: &str =
    "\n\nYour previous reply could not be parsed. Reply with only {\"selected_indices\": [...]}.";

pub fn rerank(
    pool: &CandidatePool,
    corpus: &Corpus,
    query_text: &str,
    client: &dyn ChatClient,
    prompts: &PromptSet,
    config: &RerankConfig,
) -> Result<RerankResult, RerankError> {
    if pool.is_empty() {
        return Err(RerankError::EmptyPool);
    }
    let request = RerankRequest::from_pool(pool, corpus, query_text, config.final_k);
    rerank_request(&request, client, prompts, config)
}

pub fn rerank_request(
    request: &RerankRequest,
    client: &dyn ChatClient,
    prompts: &PromptSet,
    config: &RerankConfig,
) -> Result<RerankResult, RerankError> {
    if request.candidates.is_empty() {
        return Err(RerankError::EmptyPool);
    }
    let n = request.candidates.len();
    let mut chat = build_rerank_prompt(prompts, request, config);
    let mut raw = String::new();
    for attempt in 0..=config.parse_retries {
        if attempt == 1 {
            chat.user_prompt.push_str(FORMAT_REMINDER);
        }
        match client.chat(&chat) {
            Ok(text) => {
                match parse_selection(&text, n, request.final_k) {
                    Ok(indices) => {
                        return Ok(RerankResult {
                            ranked_ids: indices
                                .into_iter()
                                .map(|i| request.candidates[i].statute_id.clone())
                                .collect(),
                            used_fallback: false,
                            raw_response: text,
                        });
                    }
                    Err(e) => tracing::debug!(error = %e, attempt, "rerank reply rejected"),
                }
                raw = text;
            }
            Err(e) => {
                tracing::warn!(error = %e, "rerank provider failed; using score order");
                raw = e.to_string();
                break;
            }
        }
    }
    Ok(RerankResult {
        ranked_ids: request.fallback_ids(),
        used_fallback: true,
        raw_response: raw,
    })
}
