//! Chat-completion clients.
//!
//! Everything above this layer talks to [`ChatClient`]. Implementations:
//! an OpenAI-compatible HTTP adapter, scripted and closure-backed mocks, and
//! record/replay wrappers whose fixtures are JSONL lines of
//! `{"request_hash": ..., "response": ...}`.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ChatRequest;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("request timed out")]
    Timeout,
    #[error("provider returned HTTP {status}")]
    ProviderError { status: u16 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("call budget exhausted")]
    BudgetExhausted,
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).chat(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).chat(request)
    }
}

/// Stable SHA-256 over the request fields, hex encoded.
pub fn request_hash(request: &ChatRequest) -> String {
    let canonical = serde_json::json!({
        "system": request.system_prompt,
        "user": request.user_prompt,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Pops canned responses in order, ignoring the request.
///
/// Single consumer: when several threads share one queue, which thread gets
/// which response is unspecified.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    queue: Mutex<VecDeque<Result<String, ChatError>>>,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            queue: Mutex::new(responses.into_iter().map(|s| Ok(s.into())).collect()),
        }
    }

    pub fn from_results(results: impl IntoIterator<Item = Result<String, ChatError>>) -> Self {
        Self {
            queue: Mutex::new(results.into_iter().collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("scripted queue poisoned").len()
    }
}

impl ChatClient for ScriptedClient {
    fn chat(&self, _request: &ChatRequest) -> Result<String, ChatError> {
        self.queue
            .lock()
            .expect("scripted queue poisoned")
            .pop_front()
            .unwrap_or(Err(ChatError::BudgetExhausted))
    }
}

/// Answers with a closure of the request.
pub struct FnClient<F>(pub F);

impl<F> ChatClient for FnClient<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (self.0)(request)
    }
}

/// Fails with `BudgetExhausted` once `max_calls` calls have been made.
pub struct BudgetedClient<C> {
    inner: C,
    max_calls: usize,
    used: AtomicUsize,
}

impl<C: ChatClient> BudgetedClient<C> {
    pub fn new(inner: C, max_calls: usize) -> Self {
        Self {
            inner,
            max_calls,
            used: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.used.load(Ordering::SeqCst).min(self.max_calls)
    }
}

impl<C: ChatClient> ChatClient for BudgetedClient<C> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.max_calls {
            return Err(ChatError::BudgetExhausted);
        }
        self.inner.chat(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request_hash: String,
    pub response: String,
}

pub fn read_fixtures(path: impl AsRef<Path>) -> std::io::Result<Vec<FixtureRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

pub fn write_fixtures(path: impl AsRef<Path>, records: &[FixtureRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Serves recorded responses by request hash. A hash recorded several times
/// replays its responses in order and then keeps repeating the last one.
#[derive(Debug, Default)]
pub struct ReplayClient {
    entries: HashMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayClient {
    pub fn new(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for r in records {
            entries.entry(r.request_hash).or_default().push(r.response);
        }
        Self {
            entries,
            cursors: Mutex::new(HashMap::new()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::new(read_fixtures(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, hash: &str) -> Option<String> {
        let responses = self.entries.get(hash)?;
        let mut cursors = self.cursors.lock().expect("replay cursor poisoned");
        let cursor = cursors.entry(hash.to_string()).or_insert(0);
        let out = responses[(*cursor).min(responses.len() - 1)].clone();
        *cursor += 1;
        Some(out)
    }
}

impl ChatClient for ReplayClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let hash = request_hash(request);
        self.lookup(&hash).ok_or(ChatError::ReplayMiss(hash))
    }
}

/// Passes calls through and keeps every successful exchange as a fixture.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<Vec<FixtureRecord>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<FixtureRecord> {
        self.log.lock().expect("recording log poisoned").clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        write_fixtures(path, &self.records())
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let response = self.inner.chat(request)?;
        self.log.lock().expect("recording log poisoned").push(FixtureRecord {
            request_hash: request_hash(request),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Replay-first cache: recorded hashes are answered locally, anything else
/// goes to `inner` and is added to the cache.
pub struct CachingClient<C> {
    inner: C,
    cache: Mutex<HashMap<String, String>>,
    fresh: Mutex<Vec<FixtureRecord>>,
}

impl<C: ChatClient> CachingClient<C> {
    pub fn new(inner: C, records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self {
            inner,
            cache: Mutex::new(records.into_iter().map(|r| (r.request_hash, r.response)).collect()),
            fresh: Mutex::new(Vec::new()),
        }
    }

    /// Responses fetched from `inner` since construction.
    pub fn fresh_records(&self) -> Vec<FixtureRecord> {
        self.fresh.lock().expect("cache poisoned").clone()
    }

    /// Append fresh responses to a fixture file.
    pub fn persist(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let fresh = self.fresh_records();
        if fresh.is_empty() {
            return Ok(());
        }
        let mut w = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        for r in fresh {
            serde_json::to_writer(&mut w, &r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<C: ChatClient> ChatClient for CachingClient<C> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let hash = request_hash(request);
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&hash) {
            return Ok(hit.clone());
        }
        let response = self.inner.chat(request)?;
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(hash.clone(), response.clone());
        self.fresh.lock().expect("cache poisoned").push(FixtureRecord {
            request_hash: hash,
            response: response.clone(),
        });
        Ok(response)
    }
}

/// OpenAI-compatible `chat/completions` adapter.
#[cfg(feature = "http")]
pub struct HttpChatClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
    retries: u32,
    backoff: std::time::Duration,
}

#[cfg(feature = "http")]
impl HttpChatClient {
    /// `endpoint` is the full URL of the completions route.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, token: Option<String>) -> Self {
        Self::with_timeout(endpoint, model, token, std::time::Duration::from_secs(120))
    }

    pub fn with_timeout(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        token: Option<String>,
        timeout: std::time::Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            model: model.into(),
            token,
            retries: 3,
            backoff: std::time::Duration::from_millis(500),
        }
    }

    /// Extra attempts after the first for timeouts, 429 and 5xx.
    pub fn retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn backoff(mut self, backoff: std::time::Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, ChatError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ChatError::Timeout,
            other => ChatError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ChatError::ProviderError { status });
        }
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ChatError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ChatError::BadResponse("missing choices[0].message.content".into()))
    }
}

#[cfg(feature = "http")]
impl ChatClient for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    let retryable = matches!(
                        e,
                        ChatError::Timeout
                            | ChatError::Transport(_)
                            | ChatError::ProviderError {
                                status: 429 | 500..=599
                            }
                    );
                    if !retryable || attempt >= self.retries {
                        return Err(e);
                    }
                    tracing::warn!(error = %e, attempt, "chat request failed; retrying");
                    std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
