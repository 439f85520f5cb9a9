//! JSONL trajectory log.
//!
//! One `{"kind":"iteration", ...}` line per iteration record followed by one
//! `{"kind":"summary", ...}` line per trajectory. Every line carries
//! `schema_version`, `query_id` and `trajectory_id`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BudgetReport, CandidatePool, IterationRecord, Termination, Trajectory, TRAJECTORY_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Iteration {
        schema_version: u32,
        query_id: String,
        trajectory_id: String,
        #[serde(flatten)]
        record: IterationRecord,
    },
    Summary {
        schema_version: u32,
        query_id: String,
        trajectory_id: String,
        terminated_by: Termination,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        pool: CandidatePool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<BudgetReport>,
    },
}

pub struct TrajectoryLogWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryLogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    fn line(&mut self, line: &LogLine) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, line).map_err(std::io::Error::other)?;
        self.out.write_all(b"\n")
    }

    pub fn write(&mut self, t: &Trajectory, budget: Option<&BudgetReport>) -> std::io::Result<()> {
        for r in &t.records {
            self.line(&LogLine::Iteration {
                schema_version: t.schema_version,
                query_id: t.query_id.clone(),
                trajectory_id: t.trajectory_id.clone(),
                record: r.clone(),
            })?;
        }
        self.line(&LogLine::Summary {
            schema_version: t.schema_version,
            query_id: t.query_id.clone(),
            trajectory_id: t.trajectory_id.clone(),
            terminated_by: t.terminated_by,
            error: t.error.clone(),
            pool: t.pool.clone(),
            budget: budget.copied(),
        })
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

pub fn write_trajectory_log(
    path: impl AsRef<Path>,
    trajectories: &[(Trajectory, Option<BudgetReport>)],
) -> std::io::Result<()> {
    let mut w = TrajectoryLogWriter::new(BufWriter::new(File::create(path)?));
    for (t, b) in trajectories {
        w.write(t, b.as_ref())?;
    }
    w.flush()
}

fn invalid(line: usize, msg: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("trajectory log line {line}: {msg}"),
    )
}

/// Reassemble trajectories in the order their summaries appear. Iteration
/// lines without a closing summary are an error.
pub fn read_trajectory_log(reader: impl BufRead) -> std::io::Result<Vec<Trajectory>> {
    let mut open: HashMap<String, Vec<IterationRecord>> = HashMap::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| invalid(i + 1, e))?;
        match parsed {
            LogLine::Iteration {
                schema_version,
                trajectory_id,
                record,
                ..
            } => {
                if schema_version > TRAJECTORY_SCHEMA_VERSION {
                    return Err(invalid(i + 1, format!("unsupported schema version {schema_version}")));
                }
                open.entry(trajectory_id).or_default().push(record);
            }
            LogLine::Summary {
                schema_version,
                query_id,
                trajectory_id,
                terminated_by,
                error,
                pool,
                ..
            } => {
                if schema_version > TRAJECTORY_SCHEMA_VERSION {
                    return Err(invalid(i + 1, format!("unsupported schema version {schema_version}")));
                }
                let records = open.remove(&trajectory_id).unwrap_or_default();
                out.push(Trajectory {
                    schema_version,
                    query_id,
                    trajectory_id,
                    records,
                    terminated_by,
                    error,
                    pool,
                });
            }
        }
    }
    if let Some(id) = open.keys().next() {
        return Err(invalid(0, format!("trajectory {id:?} has no summary line")));
    }
    Ok(out)
}

pub fn load_trajectory_log(path: impl AsRef<Path>) -> std::io::Result<Vec<Trajectory>> {
    read_trajectory_log(BufReader::new(File::open(path)?))
}
