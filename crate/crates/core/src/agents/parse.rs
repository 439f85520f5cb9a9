//! Structured-output parsing for agent replies.
//!
//! Models are asked for compact JSON but routinely wrap it in prose or code
//! fences, so every parser starts from the first well-formed JSON object
//! embedded anywhere in the reply.

use serde_json::{Map, Value};
use thiserror::Error;

use super::{AbnormalityDiagnosis, AgentRole, PlannerAction, PlannerDecision, RewriteOutput};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found")]
    NoJson,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("field {0:?} has the wrong type")]
    WrongType(&'static str),
    #[error("cardinality: {role} must produce exactly one reformulation, got {got}")]
    Cardinality { role: AgentRole, got: usize },
    #[error("empty rewrite")]
    EmptyRewrite,
}

/// Placeholder reason for decisions that arrive without one.
pub const MISSING_REASON: &str = "(no reason given)";

/// The first `{...}` in `text` that parses as a JSON object.
pub fn extract_first_json_object(text: &str) -> Option<Map<String, Value>> {
    text.char_indices().filter(|&(_, c)| c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

pub fn parse_planner_decision(text: &str) -> Result<PlannerDecision, ParseError> {
    let obj = extract_first_json_object(text).ok_or(ParseError::NoJson)?;
    let action = match obj.get("action") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(ParseError::WrongType("action")),
        None => return Err(ParseError::MissingField("action")),
    };
    let action: PlannerAction = action.parse().map_err(|_| ParseError::UnknownAction(action.clone()))?;
    let reason = obj
        .get("reason")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .unwrap_or(MISSING_REASON)
        .to_string();
    Ok(PlannerDecision { action, reason })
}

fn string_list(v: &Value, field: &'static str) -> Result<Vec<String>, ParseError> {
    match v {
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or(ParseError::WrongType(field)))
            .collect(),
        _ => Err(ParseError::WrongType(field)),
    }
}

/// Accepts a bare string, a JSON string literal, `{"query": ...}` or
/// `{"queries": [...]}`. Whitespace is trimmed, blanks dropped and exact
/// duplicates removed in first-seen order.
pub fn parse_rewrites(text: &str, role: AgentRole) -> Result<RewriteOutput, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseError::EmptyRewrite);
    }
    let raw = if let Some(obj) = extract_first_json_object(trimmed) {
        if let Some(v) = obj.get("queries") {
            string_list(v, "queries")?
        } else if let Some(v) = obj.get("query") {
            string_list(v, "query")?
        } else {
            return Err(ParseError::MissingField("queries"));
        }
    } else if let Ok(Value::String(s)) = serde_json::from_str::<Value>(trimmed) {
        vec![s]
    } else {
        vec![trimmed.to_string()]
    };

    let mut reformulations: Vec<String> = Vec::with_capacity(raw.len());
    for r in raw {
        let r = r.trim();
        if !r.is_empty() && !reformulations.iter().any(|x| x == r) {
            reformulations.push(r.to_string());
        }
    }
    if reformulations.is_empty() {
        return Err(ParseError::EmptyRewrite);
    }
    if !role.allows_multiple() && reformulations.len() > 1 {
        return Err(ParseError::Cardinality {
            role,
            got: reformulations.len(),
        });
    }
    Ok(RewriteOutput { reformulations })
}

pub fn parse_diagnosis(text: &str) -> Result<AbnormalityDiagnosis, ParseError> {
    let obj = extract_first_json_object(text).ok_or(ParseError::NoJson)?;
    let field = |keys: &[&str], name: &'static str| -> Result<String, ParseError> {
        keys.iter()
            .find_map(|k| obj.get(*k))
            .ok_or(ParseError::MissingField(name))?
            .as_str()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or(ParseError::WrongType(name))
    };
    Ok(AbnormalityDiagnosis {
        anomaly_type: field(&["type", "anomaly_type"], "type")?,
        explanation: field(&["explanation"], "explanation")?,
    })
}
