//! Statute corpora and annotated query sets.
//!
//! Both file kinds are JSONL with one record per line. Corpus records carry
//! `id`, optional `title` and `text`; query records carry `id`, `text` and
//! `gold_ids` (which may be omitted when the set is loaded unlabeled).
//!
//! Lengths are counted in Unicode scalar values, so one Chinese character
//! counts as one.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("no queries and no statutes to summarize")]
    EmptyInput,
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Self {
        Self::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }
}

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statute {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// The set of statute ids annotated as applicable to one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoldSet(BTreeSet<String>);

impl GoldSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn insert(&mut self, id: impl Into<String>) -> bool {
        self.0.insert(id.into())
    }
}

impl<S: Into<String>> FromIterator<S> for GoldSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// `None` for queries loaded in unlabeled mode.
    #[serde(default, rename = "gold_ids", skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldSet>,
}

impl Query {
    pub fn is_labeled(&self) -> bool {
        self.gold.is_some()
    }
}

/// Whether query files must carry gold annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    #[default]
    Labeled,
    Unlabeled,
}

/// An immutable collection of statutes indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    statutes: Vec<Statute>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_statutes(statutes: Vec<Statute>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(statutes.len());
        for (i, s) in statutes.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { statutes, index })
    }

    pub fn get(&self, id: &str) -> Option<&Statute> {
        self.index.get(id).map(|&i| &self.statutes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.statutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statutes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Statute> {
        self.statutes.iter()
    }

    /// Display label for a statute: its title, or its id when untitled.
    pub fn title_of<'a>(&'a self, id: &'a str) -> &'a str {
        match self.get(id) {
            Some(s) if !s.title.trim().is_empty() => &s.title,
            _ => id,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

/// Iterate non-blank lines with their 1-based line numbers.
fn records(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let mut statutes = Vec::new();
    for (line_no, line) in records(path)? {
        let s: Statute =
            serde_json::from_str(&line).map_err(|e| CorpusError::malformed(path, line_no, e.to_string()))?;
        if s.id.is_empty() {
            return Err(CorpusError::malformed(path, line_no, "empty id"));
        }
        if s.text.is_empty() {
            return Err(CorpusError::malformed(path, line_no, "empty text"));
        }
        statutes.push(s);
    }
    Corpus::from_statutes(statutes)
}

pub fn load_queries(path: impl AsRef<Path>, mode: LabelMode) -> Result<Vec<Query>, CorpusError> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    for (line_no, line) in records(path)? {
        let q: Query = serde_json::from_str(&line).map_err(|e| CorpusError::malformed(path, line_no, e.to_string()))?;
        if q.id.is_empty() {
            return Err(CorpusError::malformed(path, line_no, "empty id"));
        }
        if q.text.is_empty() {
            return Err(CorpusError::malformed(path, line_no, "empty text"));
        }
        if mode == LabelMode::Labeled && q.gold.is_none() {
            return Err(CorpusError::malformed(path, line_no, "missing gold_ids"));
        }
        queries.push(q);
    }
    Ok(queries)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| CorpusError::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), corpus.iter())
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<(), CorpusError> {
    write_jsonl(path.as_ref(), queries.iter())
}

/// Report every (query id, gold id) pair whose gold id is not in the corpus.
pub fn validate(queries: &[Query], corpus: &Corpus) -> Vec<(String, String)> {
    queries
        .iter()
        .flat_map(|q| {
            q.gold
                .iter()
                .flat_map(GoldSet::iter)
                .filter(|g| !corpus.contains(g))
                .map(|g| (q.id.clone(), g.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_queries: usize,
    pub avg_query_len: f64,
    /// Measured over the `text` field only; titles are excluded.
    pub avg_statute_len: f64,
    pub corpus_size: usize,
    /// Mean gold-set size over labeled queries.
    pub avg_relevant: f64,
}

fn mean(values: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = values.fold((0usize, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

pub fn compute_stats(queries: &[Query], corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if queries.is_empty() && corpus.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(CorpusStats {
        n_queries: queries.len(),
        avg_query_len: mean(queries.iter().map(|q| char_len(&q.text))),
        avg_statute_len: mean(corpus.iter().map(|s| char_len(&s.text))),
        corpus_size: corpus.len(),
        avg_relevant: mean(queries.iter().filter_map(|q| q.gold.as_ref()).map(GoldSet::len)),
    })
}
