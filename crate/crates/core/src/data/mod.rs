//! Example sources: the synthetic generator and event-log ingestion, plus
//! the JSON-lines example files both produce.

pub mod assemble;
pub mod ingest;
pub mod jsonl;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assemble::{assemble_examples, Assembled};
pub use ingest::{ingest_events, ingest_reader, BehaviorMapping, Ingested, UserEvents};
pub use jsonl::{read_jsonl, to_examples, write_jsonl, CandidateRecord, EventRecord, ExampleRecord};
pub use synth::{generate_synthetic, lookup_oracle_score, Pattern, SynthConfig, SynthDataset, SynthUser};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const META_FILE: &str = "meta.json";

/// Summary written next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub source: String,
    pub train_examples: usize,
    pub test_examples: usize,
    pub max_user: u64,
    pub max_item: u64,
    pub max_category: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl DataMeta {
    pub fn describe(source: &str, train: &[ExampleRecord], test: &[ExampleRecord]) -> Self {
        let all = train.iter().chain(test);
        let mut meta = Self {
            source: source.to_string(),
            train_examples: train.len(),
            test_examples: test.len(),
            max_user: 0,
            max_item: 0,
            max_category: 0,
            synth: None,
        };
        for r in all {
            meta.max_user = meta.max_user.max(r.user);
            meta.max_item = meta.max_item.max(r.candidate.item);
            meta.max_category = meta.max_category.max(r.candidate.cat);
            for e in &r.events {
                meta.max_item = meta.max_item.max(e.item);
                meta.max_category = meta.max_category.max(e.cat);
            }
        }
        meta
    }
}

/// Write `train.jsonl`, `test.jsonl` and `meta.json` into `dir`.
pub fn write_dataset(dir: &Path, train: &[ExampleRecord], test: &[ExampleRecord], meta: &DataMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(TRAIN_FILE), train)?;
    write_jsonl(&dir.join(TEST_FILE), test)?;
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
