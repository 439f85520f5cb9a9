use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, RetrievalError};
use crate::corpus::Corpus;

/// Header of the packed binary cache.
pub const BINARY_MAGIC: &[u8; 9] = b"MALR-EMB\0";

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vec: Vec<f32>,
}

/// Row-major matrix of unit vectors keyed by statute id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    /// Add a vector; normalizes it unless it is already unit length.
    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<(), RetrievalError> {
        let id = id.into();
        if self.ids.is_empty() && self.dim == 0 {
            self.dim = values.len();
        }
        if values.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        let v =
            EmbeddingVector::new(values).map_err(|reason| RetrievalError::InvalidVector { id: id.clone(), reason })?;
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v.as_slice());
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Every stored id must name a statute in `corpus`.
    pub fn check_against(&self, corpus: &Corpus) -> Result<(), RetrievalError> {
        match self.ids.iter().find(|id| !corpus.contains(id)) {
            Some(id) => Err(RetrievalError::UnknownId(id.clone())),
            None => Ok(()),
        }
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, RetrievalError> {
        let mut store = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                record: i + 1,
                reason: e.to_string(),
            })?;
            store.insert(rec.id, rec.vec)?;
        }
        Ok(store)
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), RetrievalError> {
        for (i, id) in self.ids.iter().enumerate() {
            let rec = EmbeddingRecord {
                id: id.clone(),
                vec: self.row(i).to_vec(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Layout: magic, dim (u32 LE), count (u32 LE), then per id a u32 LE byte
    /// length and UTF-8 bytes, then `count * dim` f32 LE values row-major.
    pub fn write_binary(&self, w: impl Write) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(w);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&u32_len(self.dim)?.to_le_bytes())?;
        w.write_all(&u32_len(self.ids.len())?.to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&u32_len(id.len())?.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(r: impl Read) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(RetrievalError::Malformed {
                record: 0,
                reason: "bad magic".into(),
            });
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let mut ids = Vec::with_capacity(count);
        for i in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            ids.push(String::from_utf8(buf).map_err(|e| RetrievalError::Malformed {
                record: i + 1,
                reason: e.to_string(),
            })?);
        }
        let mut store = Self::new(dim);
        let mut row = vec![0f32; dim];
        for id in ids {
            for v in row.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
            store.insert(id, row.clone())?;
        }
        Ok(store)
    }
}

fn u32_len(n: usize) -> Result<u32, RetrievalError> {
    u32::try_from(n).map_err(|_| RetrievalError::InvalidConfig(format!("{n} exceeds u32")))
}

fn read_u32(r: &mut impl Read) -> Result<u32, RetrievalError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
