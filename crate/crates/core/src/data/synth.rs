//! Synthetic users whose clicks follow planted path patterns.
//!
//! A pattern is a motif of `l` (behavior type, category) slots followed by
//! a click on the pattern's consequent category. Each user repeatedly
//! plays a few patterns. With probability `pattern_strength` a click lands
//! on the consequent category, otherwise on a uniformly random category.
//! The last session's click is held out. When the rule fires its
//! consequent is the positive, and the negative's category is drawn like
//! a random earlier click of the user, so both candidates are categories
//! the user clicks about as often. Otherwise two such categories are drawn
//! and assigned to positive and negative in random order, which makes the
//! label independent of the history.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jsonl::{CandidateRecord, EventRecord, ExampleRecord};
use crate::behavior::BehaviorType;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Id of the first generated user is `user_offset + 1`. Users at
    /// different offsets share the patterns but not their histories.
    pub user_offset: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_patterns: usize,
    /// Patterns each user plays.
    pub patterns_per_user: usize,
    /// Motif length; match the model's path length.
    pub pattern_length: usize,
    /// Probability a click follows the planted rule.
    pub pattern_strength: f64,
    /// Inclusive range of events per user before the held-out click.
    pub events_per_user: (usize, usize),
    /// Probability a motif slot is replaced by a random impression.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 5000,
            user_offset: 0,
            n_items: 2000,
            n_categories: 100,
            n_patterns: 20,
            patterns_per_user: 3,
            pattern_length: 8,
            pattern_strength: 0.9,
            events_per_user: (90, 180),
            noise_rate: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(0.0..=1.0).contains(&self.pattern_strength) {
            return bad("pattern_strength must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must be in [0, 1]");
        }
        if self.n_patterns < 1 || self.pattern_length < 1 {
            return bad("n_patterns and pattern_length must be >= 1");
        }
        if self.patterns_per_user < 1 || self.patterns_per_user > self.n_patterns {
            return bad("patterns_per_user must be in 1..=n_patterns");
        }
        if self.n_categories < 2 {
            return bad("need at least two categories");
        }
        if self.n_items < self.n_categories {
            return bad("n_items must be at least n_categories so every category has an item");
        }
        let (lo, hi) = self.events_per_user;
        if lo > hi || lo < self.pattern_length {
            return bad("events_per_user must be an ordered range starting at pattern_length or above");
        }
        // motifs are drawn without repetition from 2^l · C^l combinations
        let space = (2.0 * self.n_categories as f64).powi(self.pattern_length.min(64) as i32);
        if (self.n_patterns as f64) > space / 2.0 {
            return bad("too many patterns for the motif space");
        }
        Ok(())
    }

    /// Category of item `item` (ids start at 1).
    pub fn category_of(&self, item: u64) -> u64 {
        1 + (item - 1) % self.n_categories as u64
    }

    fn random_item_in<R: Rng>(&self, rng: &mut R, category: u64) -> u64 {
        let c = self.n_categories as u64;
        let per = (self.n_items as u64 - category) / c + 1;
        category + c * rng.random_range(0..per)
    }
}

/// A planted rule: after this motif, click the consequent category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub motif: Vec<(BehaviorType, u64)>,
    pub consequent: u64,
}

/// One generated user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user: u64,
    /// All events before the held-out click.
    pub events: Vec<EventRecord>,
    /// The pattern of the final session (the current path).
    pub current_pattern: usize,
    pub positive: CandidateRecord,
    pub negative: CandidateRecord,
}

impl SynthUser {
    /// The positive and the negative example.
    pub fn records(&self) -> [ExampleRecord; 2] {
        let rec = |candidate, label| ExampleRecord {
            user: self.user,
            candidate,
            label,
            events: self.events.clone(),
        };
        [rec(self.positive, 1), rec(self.negative, 0)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub patterns: Vec<Pattern>,
    pub users: Vec<SynthUser>,
}

impl SynthDataset {
    pub fn records(&self) -> Vec<ExampleRecord> {
        self.users.iter().flat_map(|u| u.records()).collect()
    }
}

/// The pattern table; depends on the seed and the motif parameters only.
pub fn make_patterns(cfg: &SynthConfig) -> Vec<Pattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let c = cfg.n_categories as u64;
    let mut patterns: Vec<Pattern> = Vec::with_capacity(cfg.n_patterns);
    while patterns.len() < cfg.n_patterns {
        let motif: Vec<(BehaviorType, u64)> = (0..cfg.pattern_length)
            .map(|_| {
                let kind = if rng.random_bool(0.75) {
                    BehaviorType::Impression
                } else {
                    BehaviorType::Order
                };
                (kind, rng.random_range(1..=c))
            })
            .collect();
        if patterns.iter().any(|p| p.motif == motif) {
            continue;
        }
        patterns.push(Pattern {
            motif,
            consequent: rng.random_range(1..=c),
        });
    }
    patterns
}

fn generate_user(cfg: &SynthConfig, patterns: &[Pattern], index: usize) -> SynthUser {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let c = cfg.n_categories as u64;
    let l = cfg.pattern_length;
    let mut own: Vec<usize> = (0..patterns.len()).collect();
    own.shuffle(&mut rng);
    own.truncate(cfg.patterns_per_user);

    let target = rng.random_range(cfg.events_per_user.0..=cfg.events_per_user.1);
    let sessions = (target / (l + 1)).max(1);
    let mut events = Vec::with_capacity(sessions * (l + 1));
    let mut ts: i64 = rng.random_range(0..86_400);
    let mut emit = |events: &mut Vec<EventRecord>, rng: &mut ChaCha8Rng, kind, cat| {
        ts += rng.random_range(5..600);
        events.push(EventRecord {
            item: cfg.random_item_in(rng, cat),
            cat,
            kind,
            ts,
        });
    };
    let mut current_pattern = own[0];
    for s in 0..sessions {
        let p = *own.choose(&mut rng).expect("patterns_per_user >= 1");
        for &(kind, cat) in &patterns[p].motif {
            if rng.random_bool(cfg.noise_rate) {
                let noise = rng.random_range(1..=c);
                emit(&mut events, &mut rng, BehaviorType::Impression, noise);
            } else {
                emit(&mut events, &mut rng, kind, cat);
            }
        }
        if s + 1 == sessions {
            current_pattern = p;
        } else {
            let cat = if rng.random_bool(cfg.pattern_strength) {
                patterns[p].consequent
            } else {
                rng.random_range(1..=c)
            };
            emit(&mut events, &mut rng, BehaviorType::Click, cat);
        }
    }

    let clicked: Vec<u64> = events
        .iter()
        .filter(|e| e.kind == BehaviorType::Click)
        .map(|e| e.cat)
        .collect();
    let (pos_cat, neg_cat) = if rng.random_bool(cfg.pattern_strength) {
        let pos = patterns[current_pattern].consequent;
        (pos, draw_other(&mut rng, &clicked, pos, c))
    } else {
        let a = clicked.choose(&mut rng).copied().unwrap_or_else(|| rng.random_range(1..=c));
        let b = draw_other(&mut rng, &clicked, a, c);
        if rng.random_bool(0.5) { (a, b) } else { (b, a) }
    };
    SynthUser {
        user: (index + 1) as u64,
        events,
        current_pattern,
        positive: CandidateRecord {
            item: cfg.random_item_in(&mut rng, pos_cat),
            cat: pos_cat,
        },
        negative: CandidateRecord {
            item: cfg.random_item_in(&mut rng, neg_cat),
            cat: neg_cat,
        },
    }
}

/// A category drawn like a random historical click, excluding `not`;
/// uniform over the other categories when no such click exists.
fn draw_other<R: Rng>(rng: &mut R, clicked: &[u64], not: u64, c: u64) -> u64 {
    let others: Vec<u64> = clicked.iter().copied().filter(|&x| x != not).collect();
    match others.choose(rng) {
        Some(&x) => x,
        None => {
            let x = rng.random_range(1..c);
            if x >= not { x + 1 } else { x }
        }
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let patterns = make_patterns(cfg);
    let users = (0..cfg.n_users)
        .into_par_iter()
        .map(|i| generate_user(cfg, &patterns, cfg.user_offset + i))
        .collect();
    Ok(SynthDataset { patterns, users })
}

/// Scores candidates by the planted rule alone: 1 when the candidate is the
/// consequent of the pattern that matches the final `l` events, else 0.
pub fn lookup_oracle_score(patterns: &[Pattern], record: &ExampleRecord) -> f64 {
    let l = patterns.first().map_or(0, |p| p.motif.len());
    if record.events.len() < l {
        return 0.0;
    }
    let tail: Vec<(BehaviorType, u64)> = record.events[record.events.len() - l..]
        .iter()
        .map(|e| (e.kind, e.cat))
        .collect();
    match patterns.iter().find(|p| p.motif == tail) {
        Some(p) if p.consequent == record.candidate.cat => 1.0,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 50,
            n_items: 200,
            n_categories: 20,
            n_patterns: 5,
            pattern_length: 4,
            events_per_user: (20, 40),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let bad = [
            SynthConfig { n_items: 10, n_categories: 20, ..small() },
            SynthConfig { pattern_strength: 1.5, ..small() },
            SynthConfig { n_patterns: 0, ..small() },
            SynthConfig { events_per_user: (3, 40), ..small() },
            SynthConfig { n_patterns: 100, n_categories: 2, pattern_length: 2, patterns_per_user: 1, ..small() },
        ];
        for c in bad {
            assert!(generate_synthetic(&c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn items_belong_to_their_category() {
        let cfg = small();
        let data = generate_synthetic(&cfg).unwrap();
        for u in &data.users {
            for e in &u.events {
                assert_eq!(cfg.category_of(e.item), e.cat);
                assert!(e.item >= 1 && e.item <= cfg.n_items as u64);
            }
            assert_eq!(cfg.category_of(u.positive.item), u.positive.cat);
            assert_eq!(cfg.category_of(u.negative.item), u.negative.cat);
            assert_ne!(u.positive.cat, u.negative.cat);
            assert!(u.events.windows(2).all(|w| w[0].ts < w[1].ts));
        }
    }

    #[test]
    fn offsets_make_new_users_with_the_same_patterns() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&SynthConfig { user_offset: 50, ..small() }).unwrap();
        assert_eq!(a.patterns, b.patterns);
        assert_eq!(b.users[0].user, 51);
        assert_ne!(a.users[0].events, b.users[0].events);
    }
}
