//! User behavior sequences and the paths carved out of them.
//!
//! A [`BehaviorSequence`] is a user's events in time order. Every click in it
//! anchors one [`BehaviorPath`]: the `l` events directly before that click.
//! Collecting the paths of the most recent `t` clicks gives a
//! [`PathSequence`]. All shapes are fixed: short histories are left-padded
//! with [`BehaviorEvent::PAD`], missing paths are filled with all-pad dummies.
//!
//! ```
//! use pathmatch::behavior::{BehaviorSequence, BehaviorType, RawEvent};
//!
//! let raw: Vec<RawEvent> = (0..6)
//!     .map(|i| RawEvent {
//!         item: 10 + i,
//!         category: 1,
//!         kind: if i == 4 { BehaviorType::Click } else { BehaviorType::Impression },
//!         ts: 100 * i as i64,
//!     })
//!     .collect();
//! let seq = BehaviorSequence::from_raw(&raw, 600, 256);
//! let paths = seq.path_sequence(3, 2).unwrap();
//! assert_eq!(paths.valid_count, 1);
//! let items: Vec<u64> = paths.paths[0].events.iter().map(|e| e.item_id).collect();
//! assert_eq!(items, vec![11, 12, 13]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of non-pad time buckets.
pub const TIME_BUCKETS: usize = 16;

// log2(1 + delta) spans [0, 25] for deltas up to ~1 year (2^25 s).
const LOG2_SPAN: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorType {
    Pad,
    Click,
    Impression,
    Order,
}

impl BehaviorType {
    /// Number of rows in the behavior-type embedding table (pad included).
    pub const VOCAB: usize = 4;

    pub fn row(self) -> usize {
        match self {
            BehaviorType::Pad => 0,
            BehaviorType::Click => 1,
            BehaviorType::Impression => 2,
            BehaviorType::Order => 3,
        }
    }
}

/// Map a non-negative interval in seconds onto one of [`TIME_BUCKETS`]
/// logarithmic buckets, numbered from 1 (0 is reserved for padding).
pub fn time_bucket(delta_seconds: i64) -> u8 {
    let delta = delta_seconds.max(0) as f64;
    let scaled = (1.0 + delta).log2() * TIME_BUCKETS as f64 / LOG2_SPAN;
    1 + (scaled.floor() as usize).min(TIME_BUCKETS - 1) as u8
}

/// One user-item interaction, with the positional features the model embeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub item_id: u64,
    pub category_id: u64,
    pub behavior_type: BehaviorType,
    pub time_bucket: u8,
    /// 1-based index in the owning sequence; 0 for padding.
    pub position: usize,
}

impl BehaviorEvent {
    pub const PAD: BehaviorEvent = BehaviorEvent {
        item_id: 0,
        category_id: 0,
        behavior_type: BehaviorType::Pad,
        time_bucket: 0,
        position: 0,
    };

    pub fn is_pad(&self) -> bool {
        self.behavior_type == BehaviorType::Pad
    }

    pub fn is_click(&self) -> bool {
        self.behavior_type == BehaviorType::Click
    }
}

/// An event before time bucketing and position assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub item: u64,
    pub category: u64,
    pub kind: BehaviorType,
    pub ts: i64,
}

/// A user's events sorted by occurrence time.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BehaviorSequence {
    events: Vec<BehaviorEvent>,
}

impl BehaviorSequence {
    /// Build a sequence from raw events observed at time `now`.
    ///
    /// Events are stably sorted by timestamp, the `t_max` most recent are
    /// kept and positions are reassigned `1..=T`. Raw pad events and events
    /// whose item id is the reserved 0 are dropped.
    pub fn from_raw(raw: &[RawEvent], now: i64, t_max: usize) -> Self {
        let mut sorted: Vec<&RawEvent> = raw
            .iter()
            .filter(|r| r.kind != BehaviorType::Pad && r.item != 0)
            .collect();
        sorted.sort_by_key(|r| r.ts);
        let skip = sorted.len().saturating_sub(t_max);
        let events = sorted[skip..]
            .iter()
            .enumerate()
            .map(|(i, r)| BehaviorEvent {
                item_id: r.item,
                category_id: r.category,
                behavior_type: r.kind,
                time_bucket: time_bucket(now - r.ts),
                position: i + 1,
            })
            .collect();
        Self { events }
    }

    /// Wrap already-positioned events, checking the sequence invariants.
    pub fn from_events(events: Vec<BehaviorEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.is_pad() != (e.item_id == 0) {
                return Err(Error::InvalidArgument(format!(
                    "event {i}: pad type and item id 0 must coincide"
                )));
            }
            if e.is_pad() {
                return Err(Error::InvalidArgument(format!(
                    "event {i}: sequences cannot contain pad events"
                )));
            }
            if i > 0 && e.position <= events[i - 1].position {
                return Err(Error::InvalidArgument(format!(
                    "event {i}: positions must be strictly increasing"
                )));
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[BehaviorEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// All clicks with their 0-based index in the sequence.
    pub fn click_sequence(&self) -> Vec<(usize, BehaviorEvent)> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_click())
            .map(|(i, e)| (i, *e))
            .collect()
    }

    /// The `l` events strictly before the click at `click_index`.
    pub fn behavior_path(&self, click_index: usize, l: usize) -> Result<BehaviorPath> {
        if l < 1 {
            return Err(Error::InvalidArgument("path length must be >= 1".into()));
        }
        let anchor = self.events.get(click_index).ok_or(Error::OutOfRange {
            what: "behavior sequence",
            index: click_index,
            size: self.events.len(),
        })?;
        if !anchor.is_click() {
            return Err(Error::InvalidArgument(format!(
                "event {click_index} is {:?}, not a click",
                anchor.behavior_type
            )));
        }
        Ok(BehaviorPath {
            events: left_padded(&self.events[..click_index], l),
            anchor: Some(*anchor),
            anchor_position: anchor.position,
        })
    }

    /// One path per click for the `t` most recent clicks, padded with
    /// dummy paths up to exactly `t`.
    pub fn path_sequence(&self, l: usize, t: usize) -> Result<PathSequence> {
        if t < 1 {
            return Err(Error::InvalidArgument("path count must be >= 1".into()));
        }
        let clicks = self.click_sequence();
        let keep = &clicks[clicks.len().saturating_sub(t)..];
        let mut paths = keep
            .iter()
            .map(|&(i, _)| self.behavior_path(i, l))
            .collect::<Result<Vec<_>>>()?;
        let valid_count = paths.len();
        paths.resize_with(t, || BehaviorPath::dummy(l));
        Ok(PathSequence { paths, valid_count })
    }

    /// The last `l` events, as the path leading up to the prediction.
    pub fn current_path(&self, l: usize) -> Result<BehaviorPath> {
        if l < 1 {
            return Err(Error::InvalidArgument("path length must be >= 1".into()));
        }
        Ok(BehaviorPath {
            events: left_padded(&self.events, l),
            anchor: None,
            anchor_position: self.events.len() + 1,
        })
    }
}

fn left_padded(history: &[BehaviorEvent], l: usize) -> Vec<BehaviorEvent> {
    let tail = &history[history.len().saturating_sub(l)..];
    let mut out = vec![BehaviorEvent::PAD; l - tail.len()];
    out.extend_from_slice(tail);
    out
}

/// A fixed-length window of events preceding an anchor.
///
/// `anchor` is the click this path leads to. It is `None` for dummy paths and
/// for the current path, whose anchor is the not-yet-observed next event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorPath {
    pub events: Vec<BehaviorEvent>,
    pub anchor: Option<BehaviorEvent>,
    pub anchor_position: usize,
}

impl BehaviorPath {
    pub fn dummy(l: usize) -> Self {
        Self {
            events: vec![BehaviorEvent::PAD; l],
            anchor: None,
            anchor_position: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_dummy(&self) -> bool {
        self.anchor.is_none() && self.events.iter().all(BehaviorEvent::is_pad)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSequence {
    /// Exactly `t` paths, real ones first in anchor order.
    pub paths: Vec<BehaviorPath>,
    pub valid_count: usize,
}

impl PathSequence {
    pub fn valid(&self) -> &[BehaviorPath] {
        &self.paths[..self.valid_count]
    }
}

/// Free-function forms of the sequence operations.
pub fn extract_click_sequence(seq: &BehaviorSequence) -> Vec<(usize, BehaviorEvent)> {
    seq.click_sequence()
}

pub fn extract_behavior_path(
    seq: &BehaviorSequence,
    click_index: usize,
    l: usize,
) -> Result<BehaviorPath> {
    seq.behavior_path(click_index, l)
}

pub fn build_path_sequence(seq: &BehaviorSequence, l: usize, t: usize) -> Result<PathSequence> {
    seq.path_sequence(l, t)
}

pub fn current_path(seq: &BehaviorSequence, l: usize) -> Result<BehaviorPath> {
    seq.current_path(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(item: u64, kind: BehaviorType, position: usize) -> BehaviorEvent {
        BehaviorEvent {
            item_id: item,
            category_id: 1,
            behavior_type: kind,
            time_bucket: 1,
            position,
        }
    }

    /// h1..h11 with clicks at h4, h7, h11.
    fn figure_one() -> BehaviorSequence {
        let events = (1..=11)
            .map(|h| {
                let kind = if matches!(h, 4 | 7 | 11) {
                    BehaviorType::Click
                } else {
                    BehaviorType::Impression
                };
                ev(h as u64, kind, h)
            })
            .collect();
        BehaviorSequence::from_events(events).unwrap()
    }

    fn items(path: &BehaviorPath) -> Vec<u64> {
        path.events.iter().map(|e| e.item_id).collect()
    }

    #[test]
    fn figure_one_clicks() {
        let clicks = figure_one().click_sequence();
        let labels: Vec<(usize, u64)> = clicks.iter().map(|(_, e)| (e.position, e.item_id)).collect();
        assert_eq!(labels, vec![(4, 4), (7, 7), (11, 11)]);
        let indices: Vec<usize> = clicks.iter().map(|(i, _)| *i).collect();
        assert_eq!(indices, vec![3, 6, 10]);
    }

    #[test]
    fn figure_one_path_of_h7() {
        let p = figure_one().behavior_path(6, 3).unwrap();
        assert_eq!(items(&p), vec![4, 5, 6]);
        assert_eq!(p.anchor.unwrap().item_id, 7);
        assert_eq!(p.anchor_position, 7);
    }

    #[test]
    fn figure_one_path_sequence() {
        let ps = figure_one().path_sequence(3, 3).unwrap();
        assert_eq!(ps.valid_count, 3);
        let anchors: Vec<u64> = ps.paths.iter().map(|p| p.anchor.unwrap().item_id).collect();
        assert_eq!(anchors, vec![4, 7, 11]);
        assert_eq!(items(&ps.paths[0]), vec![1, 2, 3]);
        assert_eq!(items(&ps.paths[2]), vec![8, 9, 10]);
    }

    #[test]
    fn empty_cases() {
        let seq = BehaviorSequence::default();
        assert!(seq.click_sequence().is_empty());
        let ps = seq.path_sequence(3, 5).unwrap();
        assert_eq!(ps.valid_count, 0);
        assert_eq!(ps.paths.len(), 5);
        assert!(ps.paths.iter().all(BehaviorPath::is_dummy));
        let cur = seq.current_path(3).unwrap();
        assert_eq!(cur.events, vec![BehaviorEvent::PAD; 3]);
        assert_eq!(cur.anchor_position, 1);
    }

    #[test]
    fn click_at_start_is_all_pad() {
        let seq = BehaviorSequence::from_events(vec![
            ev(5, BehaviorType::Click, 1),
            ev(6, BehaviorType::Impression, 2),
        ])
        .unwrap();
        let p = seq.behavior_path(0, 3).unwrap();
        assert_eq!(p.events, vec![BehaviorEvent::PAD; 3]);
    }

    #[test]
    fn rejects_bad_anchor_and_length() {
        let seq = figure_one();
        assert!(seq.behavior_path(0, 3).is_err());
        assert!(seq.behavior_path(6, 0).is_err());
        assert!(seq.behavior_path(99, 3).is_err());
        assert!(seq.current_path(0).is_err());
        assert!(seq.path_sequence(3, 0).is_err());
    }

    #[test]
    fn current_path_is_suffix() {
        let cur = figure_one().current_path(3).unwrap();
        assert_eq!(items(&cur), vec![9, 10, 11]);
        assert_eq!(cur.anchor_position, 12);
        assert!(cur.anchor.is_none());
    }

    #[test]
    fn overlapping_paths_share_events() {
        let kinds = [
            BehaviorType::Impression,
            BehaviorType::Click,
            BehaviorType::Click,
            BehaviorType::Click,
        ];
        let events = kinds.iter().enumerate().map(|(i, k)| ev(i as u64 + 1, *k, i + 1)).collect();
        let seq = BehaviorSequence::from_events(events).unwrap();
        let ps = seq.path_sequence(3, 3).unwrap();
        assert_eq!(items(&ps.paths[2]), vec![1, 2, 3]);
        assert_eq!(items(&ps.paths[1]), vec![0, 1, 2]);
    }

    #[test]
    fn from_raw_sorts_truncates_and_buckets() {
        let raw = vec![
            RawEvent { item: 3, category: 1, kind: BehaviorType::Click, ts: 30 },
            RawEvent { item: 1, category: 1, kind: BehaviorType::Impression, ts: 10 },
            RawEvent { item: 2, category: 1, kind: BehaviorType::Order, ts: 20 },
            RawEvent { item: 4, category: 1, kind: BehaviorType::Impression, ts: 20 },
        ];
        let seq = BehaviorSequence::from_raw(&raw, 30, 3);
        let got: Vec<(u64, usize)> = seq.events().iter().map(|e| (e.item_id, e.position)).collect();
        // ties on ts keep input order (2 before 4); the oldest event is truncated
        assert_eq!(got, vec![(2, 1), (4, 2), (3, 3)]);
        assert_eq!(seq.events()[2].time_bucket, 1);
    }

    #[test]
    fn time_buckets_are_monotone_and_bounded() {
        assert_eq!(time_bucket(0), 1);
        assert_eq!(time_bucket(-5), 1);
        assert_eq!(time_bucket(i64::MAX), TIME_BUCKETS as u8);
        let mut prev = 0;
        for d in [0i64, 1, 10, 100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000, 40_000_000] {
            let b = time_bucket(d);
            assert!(b >= prev && (1..=TIME_BUCKETS as u8).contains(&b));
            prev = b;
        }
    }

    #[test]
    fn from_events_checks_invariants() {
        assert!(BehaviorSequence::from_events(vec![
            ev(1, BehaviorType::Click, 2),
            ev(2, BehaviorType::Click, 2),
        ])
        .is_err());
        assert!(BehaviorSequence::from_events(vec![ev(0, BehaviorType::Click, 1)]).is_err());
    }
}
