//! One example per line:
//! `{"user", "candidate": {"item", "cat"}, "label", "events": [{"item", "cat", "type", "ts"}]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorSequence, BehaviorType, RawEvent};
use crate::error::{Error, Result};
use crate::model::{Candidate, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub item: u64,
    pub cat: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub item: u64,
    pub cat: u64,
    #[serde(rename = "type")]
    pub kind: BehaviorType,
    pub ts: i64,
}

impl From<RawEvent> for EventRecord {
    fn from(r: RawEvent) -> Self {
        Self {
            item: r.item,
            cat: r.category,
            kind: r.kind,
            ts: r.ts,
        }
    }
}

impl From<EventRecord> for RawEvent {
    fn from(r: EventRecord) -> Self {
        Self {
            item: r.item,
            category: r.cat,
            kind: r.kind,
            ts: r.ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub user: u64,
    pub candidate: CandidateRecord,
    pub label: u8,
    pub events: Vec<EventRecord>,
}

impl ExampleRecord {
    /// Resolve into a training example. Time buckets are measured from
    /// the latest event, the closest known time to the prediction.
    pub fn to_example(&self, t_max: usize) -> Result<TrainingExample> {
        if self.label > 1 {
            return Err(Error::Data(format!("label {} is not binary", self.label)));
        }
        if self.events.iter().any(|e| e.ts < 0) {
            return Err(Error::Data("negative timestamp".into()));
        }
        if self.events.iter().any(|e| e.kind == BehaviorType::Pad) {
            return Err(Error::Data("pad events cannot appear in a record".into()));
        }
        let raw: Vec<RawEvent> = self.events.iter().map(|&e| e.into()).collect();
        let now = raw.iter().map(|e| e.ts).max().unwrap_or(0);
        Ok(TrainingExample {
            user: self.user,
            candidate: Candidate {
                item: self.candidate.item,
                category: self.candidate.cat,
            },
            label: self.label,
            history: BehaviorSequence::from_raw(&raw, now, t_max),
        })
    }
}

pub fn to_examples(records: &[ExampleRecord], t_max: usize) -> Result<Vec<TrainingExample>> {
    records.iter().map(|r| r.to_example(t_max)).collect()
}

pub fn write_jsonl(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ExampleRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
