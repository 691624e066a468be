use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Vocab};
use crate::behavior::{BehaviorEvent, BehaviorSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub item: u64,
    pub category: u64,
}

/// One labeled prediction: a user, their history, and a candidate item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub user: u64,
    pub candidate: Candidate,
    pub label: u8,
    pub history: BehaviorSequence,
}

/// Table row of `id` in a table of `size` rows; 0 stays the pad row and
/// other ids are folded into `1..size`.
pub fn fold_id(id: u64, size: usize) -> usize {
    if id == 0 {
        0
    } else {
        1 + ((id - 1) % (size as u64 - 1)) as usize
    }
}

/// Embedding-table rows for one behavior event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRows {
    pub item: usize,
    pub category: usize,
    pub behavior: usize,
    pub time: usize,
    pub position: usize,
}

impl EventRows {
    pub const PAD: EventRows = EventRows {
        item: 0,
        category: 0,
        behavior: 0,
        time: 0,
        position: 0,
    };

    pub fn of(e: &BehaviorEvent, vocab: &Vocab) -> Self {
        if e.is_pad() {
            return Self::PAD;
        }
        Self {
            item: fold_id(e.item_id, vocab.items),
            category: fold_id(e.category_id, vocab.categories),
            behavior: e.behavior_type.row(),
            time: e.time_bucket as usize,
            position: fold_id(e.position as u64, vocab.positions),
        }
    }

    pub fn is_pad(&self) -> bool {
        *self == Self::PAD
    }
}

/// A [`TrainingExample`] resolved into table rows with its path structure.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub user: usize,
    pub cand_item: usize,
    pub cand_category: usize,
    /// `t · l` events of the historical paths, path-major.
    pub history: Vec<EventRows>,
    /// The `t` anchor clicks; pad rows for dummy paths.
    pub anchors: Vec<EventRows>,
    /// The `l` events of the current path.
    pub current: Vec<EventRows>,
    pub valid_count: usize,
    pub label: f64,
}

impl EncodedExample {
    pub fn new(ex: &TrainingExample, cfg: &ModelConfig) -> Result<Self> {
        if ex.label > 1 {
            return Err(Error::Data(format!("label {} is not binary", ex.label)));
        }
        if ex.candidate.item == 0 {
            return Err(Error::Data("candidate item id 0 is reserved for padding".into()));
        }
        let v = &cfg.vocab;
        let paths = ex.history.path_sequence(cfg.l, cfg.t)?;
        let current = ex.history.current_path(cfg.l)?;
        let history = paths
            .paths
            .iter()
            .flat_map(|p| p.events.iter().map(|e| EventRows::of(e, v)))
            .collect();
        let anchors = paths
            .paths
            .iter()
            .map(|p| p.anchor.map_or(EventRows::PAD, |a| EventRows::of(&a, v)))
            .collect();
        Ok(Self {
            user: fold_id(ex.user, v.users),
            cand_item: fold_id(ex.candidate.item, v.items),
            cand_category: fold_id(ex.candidate.category, v.categories),
            history,
            anchors,
            current: current.events.iter().map(|e| EventRows::of(e, v)).collect(),
            valid_count: paths.valid_count,
            label: ex.label as f64,
        })
    }

    /// Events of historical path `i`.
    pub fn path(&self, i: usize, l: usize) -> &[EventRows] {
        &self.history[i * l..(i + 1) * l]
    }
}

pub fn encode_all(examples: &[TrainingExample], cfg: &ModelConfig) -> Result<Vec<EncodedExample>> {
    examples.iter().map(|e| EncodedExample::new(e, cfg)).collect()
}
