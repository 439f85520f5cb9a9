//! Planted corpus with orthogonal embeddings and a scripted chat mock.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use malr_core::agents::{ChatError, ChatRequest, FixtureRecord, PromptSet};
use malr_core::corpus::{write_corpus, write_queries, Corpus, GoldSet, Query, Statute};
use malr_core::retrieval::{EmbeddingStore, TableProvider};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Planted {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub store: EmbeddingStore,
    /// Text → vector, for queries and every aspect phrase.
    pub texts: Vec<(String, Vec<f32>)>,
    /// Query text → one phrase per gold statute.
    pub aspects: HashMap<String, Vec<String>>,
    /// Query text → gold ids.
    pub gold_by_text: HashMap<String, GoldSet>,
}

fn basis(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

fn aspect_text(i: usize) -> String {
    format!("circumstances concerning matter {i:03}")
}

/// `n_statutes` statutes on orthogonal axes; each query has 1 to 3 gold
/// statutes and its embedding is the normalized sum of their axes.
pub fn planted(n_statutes: usize, n_queries: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let statutes: Vec<Statute> = (0..n_statutes)
        .map(|i| Statute {
            id: format!("s{i:03}"),
            title: format!("Article {i}"),
            text: format!("Provisions governing matter {i:03}."),
        })
        .collect();
    let mut store = EmbeddingStore::new(n_statutes);
    for (i, s) in statutes.iter().enumerate() {
        store.insert(s.id.clone(), basis(n_statutes, i)).unwrap();
    }
    let mut texts: Vec<(String, Vec<f32>)> = (0..n_statutes)
        .map(|i| (aspect_text(i), basis(n_statutes, i)))
        .collect();
    let mut queries = Vec::new();
    let mut aspects = HashMap::new();
    let mut gold_by_text = HashMap::new();
    let mut axes: Vec<usize> = (0..n_statutes).collect();
    for j in 0..n_queries {
        axes.shuffle(&mut rng);
        let n_gold = rng.random_range(1..=3);
        let mut chosen: Vec<usize> = axes[..n_gold].to_vec();
        chosen.sort_unstable();
        let phrases: Vec<String> = chosen.iter().map(|&i| aspect_text(i)).collect();
        let text = format!("Case {j}: {}", phrases.join(" and "));
        let mut v = vec![0.0f32; n_statutes];
        for &i in &chosen {
            v[i] = 1.0;
        }
        texts.push((text.clone(), v));
        let gold: GoldSet = chosen.iter().map(|&i| format!("s{i:03}")).collect();
        aspects.insert(text.clone(), phrases);
        gold_by_text.insert(text.clone(), gold.clone());
        queries.push(Query {
            id: format!("q{j:03}"),
            text,
            gold: Some(gold),
        });
    }
    Planted {
        corpus: Corpus::from_statutes(statutes).unwrap(),
        queries,
        store,
        texts,
        aspects,
        gold_by_text,
    }
}

impl Planted {
    pub fn provider(&self) -> TableProvider {
        let mut t = TableProvider::new();
        for (text, v) in &self.texts {
            t.insert(text.clone(), v.clone()).unwrap();
        }
        t
    }

    /// Layout read by `pipeline --mock-fixtures`.
    pub fn write_dir(&self, dir: &Path, chat: &[FixtureRecord]) {
        write_corpus(dir.join("corpus.jsonl"), &self.corpus).unwrap();
        write_queries(dir.join("queries.jsonl"), &self.queries).unwrap();
        self.store
            .write_jsonl(std::fs::File::create(dir.join("embeddings.jsonl")).unwrap())
            .unwrap();
        let mut f = std::fs::File::create(dir.join("text_embeddings.jsonl")).unwrap();
        for (text, vec) in &self.texts {
            serde_json::to_writer(&mut f, &serde_json::json!({ "text": text, "vec": vec })).unwrap();
            f.write_all(b"\n").unwrap();
        }
        malr_core::agents::write_fixtures(dir.join("chat.replay.jsonl"), chat).unwrap();
    }
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let i = s.find(start)? + start.len();
    let j = s[i..].find(end)? + i;
    Some(&s[i..j])
}

/// Scripted behaviour: decomposition for multi-gold queries, single-element
/// otherwise, then exit; rewriters return the planted phrases; the reranker
/// puts gold candidates first, or replies with garbage.
pub struct Mock {
    prompts: PromptSet,
    aspects: HashMap<String, Vec<String>>,
    gold: HashMap<String, GoldSet>,
    pub garbage_rerank: bool,
}

impl Mock {
    pub fn new(p: &Planted) -> Self {
        Self {
            prompts: PromptSet::default(),
            aspects: p.aspects.clone(),
            gold: p.gold_by_text.clone(),
            garbage_rerank: false,
        }
    }

    fn query_of<'a>(&self, user: &'a str, header: &str) -> Option<&'a str> {
        let rest = &user[user.find(header)? + header.len()..];
        Some(rest.lines().next().unwrap_or("").trim())
    }

    pub fn respond(&self, r: &ChatRequest) -> Result<String, ChatError> {
        let p = &self.prompts;
        if r.system_prompt == p.planner_system {
            let q = self.query_of(&r.user_prompt, "Query:\n").unwrap_or_default();
            let pool: usize = between(&r.user_prompt, "Candidate pool size: ", "\n")
                .and_then(|s| s.trim().parse().ok())
                .unwrap_or(0);
            let action = if pool > 0 {
                "exit"
            } else if self.aspects.get(q).is_some_and(|a| a.len() > 1) {
                "multi_element_decomposition"
            } else {
                "single_element"
            };
            return Ok(format!(r#"{{"action": "{action}", "reason": "scripted"}}"#));
        }
        if r.system_prompt == p.rerank_system {
            if self.garbage_rerank {
                return Ok("I think the first few look relevant!".into());
            }
            let q = self.query_of(&r.user_prompt, "Question:\n").unwrap_or_default();
            let gold = self.gold.get(q).cloned().unwrap_or_default();
            let mut first = Vec::new();
            let mut rest = Vec::new();
            for line in r.user_prompt.lines().filter(|l| l.starts_with('[')) {
                let idx: usize = between(line, "[", "]").unwrap().parse().unwrap();
                let id = &line[line.rfind('(').unwrap() + 1..line.rfind(')').unwrap()];
                if gold.contains(id) {
                    first.push(idx);
                } else {
                    rest.push(idx);
                }
            }
            first.extend(rest);
            return Ok(serde_json::json!({ "selected_indices": first }).to_string());
        }
        let q = self.query_of(&r.user_prompt, "Query:\n").unwrap_or_default();
        let phrases = self.aspects.get(q).cloned().unwrap_or_else(|| vec![q.to_string()]);
        if r.system_prompt == p.multi_element_decomposition {
            Ok(serde_json::json!({ "queries": phrases }).to_string())
        } else {
            Ok(serde_json::json!({ "query": q }).to_string())
        }
    }
}

/// Drive the library pipeline with the mock and keep every exchange, so the
/// CLI can replay it.
pub fn record_fixtures(p: &Planted, mock: &Mock) -> Vec<FixtureRecord> {
    use malr_core::agents::{AgentSettings, Agents, FnClient, RecordingClient};
    use malr_core::orchestrator::{MasConfig, MasRunner, RunMode};
    use malr_core::reranker::{rerank, RerankConfig};
    use malr_core::retrieval::{PassThroughScorer, RetrievalConfig, Retriever};

    let client = RecordingClient::new(FnClient(|r: &ChatRequest| mock.respond(r)));
    let prompts = PromptSet::default();
    let agents = Agents::new(&client, &prompts, AgentSettings::default());
    let provider = p.provider();
    let retriever = Retriever::new(&p.store, &provider, &PassThroughScorer, RetrievalConfig::default()).unwrap();
    let runner = MasRunner::new(&agents, retriever, &p.corpus, MasConfig::default());
    for q in &p.queries {
        let run = runner.run(&q.id, &q.text, RunMode::Inference).unwrap();
        rerank(
            run.pool(),
            &p.corpus,
            &q.text,
            &client,
            &prompts,
            &RerankConfig::default(),
        )
        .unwrap();
    }
    client.records()
}
