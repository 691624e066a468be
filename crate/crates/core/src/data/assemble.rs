use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;

use super::ingest::UserEvents;
use super::jsonl::{CandidateRecord, EventRecord, ExampleRecord};
use crate::behavior::BehaviorType;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub records: Vec<ExampleRecord>,
    /// Users without a click.
    pub skipped_users: usize,
}

/// Per user, the last click becomes a positive example whose history is
/// every event strictly earlier in time, plus `neg_ratio` negatives drawn
/// uniformly from corpus items the user never interacted with.
pub fn assemble_examples<R: Rng>(users: &[UserEvents], neg_ratio: usize, rng: &mut R) -> Result<Assembled> {
    if neg_ratio < 1 {
        return Err(Error::InvalidArgument("neg_ratio must be >= 1".into()));
    }
    let mut category: HashMap<u64, u64> = HashMap::new();
    for u in users {
        for e in &u.events {
            category.entry(e.item).or_insert(e.category);
        }
    }
    let mut catalog: Vec<u64> = category.keys().copied().collect();
    catalog.sort_unstable();

    // per-user seeds keep the parallel sampling deterministic
    let seeds: Vec<u64> = users.iter().map(|_| rng.random()).collect();
    let per_user: Vec<Result<Option<Vec<ExampleRecord>>>> = users
        .par_iter()
        .zip(seeds)
        .map(|(u, seed)| {
            let Some(last) = u.events.iter().rposition(|e| e.kind == BehaviorType::Click) else {
                return Ok(None);
            };
            let click = u.events[last];
            let events: Vec<EventRecord> = u.events[..last]
                .iter()
                .filter(|e| e.ts < click.ts)
                .map(|&e| e.into())
                .collect();
            let seen: HashSet<u64> = u.events.iter().map(|e| e.item).collect();
            if seen.len() >= catalog.len() {
                return Err(Error::Data(format!(
                    "user {} interacted with every item; no negative to sample",
                    u.user
                )));
            }
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let mut out = Vec::with_capacity(1 + neg_ratio);
            out.push(ExampleRecord {
                user: u.user,
                candidate: CandidateRecord {
                    item: click.item,
                    cat: click.category,
                },
                label: 1,
                events: events.clone(),
            });
            while out.len() < 1 + neg_ratio {
                let item = catalog[rng.random_range(0..catalog.len())];
                if seen.contains(&item) {
                    continue;
                }
                out.push(ExampleRecord {
                    user: u.user,
                    candidate: CandidateRecord {
                        item,
                        cat: category[&item],
                    },
                    label: 0,
                    events: events.clone(),
                });
            }
            Ok(Some(out))
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped_users = 0;
    for r in per_user {
        match r? {
            Some(v) => records.extend(v),
            None => skipped_users += 1,
        }
    }
    Ok(Assembled {
        records,
        skipped_users,
    })
}
