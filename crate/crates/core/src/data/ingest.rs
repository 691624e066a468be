//! Reading comma-separated event logs `user,item,category,type,timestamp`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorType, RawEvent};
use crate::error::{Error, Result};

/// Fraction of malformed lines tolerated before ingestion aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Log behavior names mapped to behavior types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorMapping(pub HashMap<String, BehaviorType>);

impl Default for BehaviorMapping {
    fn default() -> Self {
        Self(
            [
                ("pv", BehaviorType::Click),
                ("buy", BehaviorType::Order),
                ("cart", BehaviorType::Impression),
                ("fav", BehaviorType::Impression),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }
}

/// All kept events of one user, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEvents {
    pub user: u64,
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub users: Vec<UserEvents>,
    /// Data lines read (a header line is not counted).
    pub lines: usize,
    pub skipped: usize,
    /// Events dropped by the `t_max` cap.
    pub truncated: usize,
}

fn parse(record: &csv::StringRecord, mapping: &BehaviorMapping) -> Option<(u64, RawEvent)> {
    if record.len() != 5 {
        return None;
    }
    let num = |i: usize| record.get(i)?.trim().parse::<u64>().ok();
    let kind = *mapping.0.get(record.get(3)?.trim())?;
    let ts: i64 = record.get(4)?.trim().parse().ok()?;
    if ts < 0 || kind == BehaviorType::Pad {
        return None;
    }
    let item = num(1)?;
    if item == 0 {
        return None;
    }
    Some((
        num(0)?,
        RawEvent {
            item,
            category: num(2)?,
            kind,
            ts,
        },
    ))
}

fn is_header(record: &csv::StringRecord) -> bool {
    record.get(0).is_some_and(|f| f.trim().parse::<u64>().is_err())
        && record.get(4).is_some_and(|f| f.trim().parse::<i64>().is_err())
}

/// Parse `reader`, group by user, sort each user by timestamp and
/// keep the `t_max` most recent events. Malformed lines are skipped and
/// counted; more than `ceil(1% of lines)` of them is an error.
pub fn ingest_reader<R: std::io::Read>(reader: R, mapping: &BehaviorMapping, t_max: usize) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut by_user: BTreeMap<u64, Vec<RawEvent>> = BTreeMap::new();
    let (mut lines, mut skipped) = (0usize, 0usize);
    for (i, rec) in rdr.records().enumerate() {
        let Ok(rec) = rec else {
            lines += 1;
            skipped += 1;
            continue;
        };
        if i == 0 && is_header(&rec) {
            continue;
        }
        lines += 1;
        match parse(&rec, mapping) {
            Some((user, ev)) => by_user.entry(user).or_default().push(ev),
            None => skipped += 1,
        }
    }
    let limit = (MAX_MALFORMED_FRACTION * lines as f64).ceil() as usize;
    if skipped > limit {
        return Err(Error::TooManyMalformed {
            malformed: skipped,
            total: lines,
            limit,
        });
    }
    let mut users: Vec<UserEvents> = by_user
        .into_iter()
        .map(|(user, events)| UserEvents { user, events })
        .collect();
    let truncated = users
        .par_iter_mut()
        .map(|u| {
            // ties broken on content so line order never matters
            u.events.sort_by_key(|e| (e.ts, e.item, e.category, e.kind.row()));
            let extra = u.events.len().saturating_sub(t_max);
            u.events.drain(..extra);
            extra
        })
        .sum();
    Ok(Ingested {
        users,
        lines,
        skipped,
        truncated,
    })
}

pub fn ingest_events(path: &Path, mapping: &BehaviorMapping, t_max: usize) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(file), mapping, t_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> Result<Ingested> {
        ingest_reader(text.as_bytes(), &BehaviorMapping::default(), 1000)
    }

    #[test]
    fn empty_input() {
        let r = run("").unwrap();
        assert!(r.users.is_empty());
        assert_eq!((r.lines, r.skipped), (0, 0));
    }

    #[test]
    fn one_malformed_line_of_three() {
        let r = run("1,10,3,pv,100\n1,11,3,buy,50\n1,oops,3\n").unwrap();
        assert_eq!(r.users.len(), 1);
        assert_eq!(r.users[0].events.len(), 2);
        assert_eq!(r.skipped, 1);
        // sorted by time
        assert_eq!(r.users[0].events[0].kind, BehaviorType::Order);
    }

    #[test]
    fn too_many_malformed_lines_abort() {
        let mut text = String::new();
        for i in 0..200 {
            text.push_str(&format!("1,{},1,pv,{i}\n", i + 1));
        }
        // 203 lines tolerate ceil(2.03) = 3 malformed, 204 lines still 3
        let ok = format!("{text}x\ny\nz\n");
        assert_eq!(run(&ok).unwrap().skipped, 3);
        let bad = format!("{text}x\ny\nz\nw\n");
        assert!(matches!(run(&bad), Err(Error::TooManyMalformed { malformed: 4, total: 204, limit: 3 })));
    }

    #[test]
    fn header_types_and_truncation() {
        let text = "user_id,item_id,category_id,behavior_type,timestamp\n\
                    2,5,1,cart,30\n2,6,1,fav,20\n2,7,1,pv,10\n2,8,1,unknown,5\n";
        let r = ingest_reader(text.as_bytes(), &BehaviorMapping::default(), 2);
        let r = r.unwrap_or_else(|e| panic!("{e}"));
        assert_eq!(r.lines, 4);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.truncated, 1);
        let kinds: Vec<_> = r.users[0].events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![BehaviorType::Impression, BehaviorType::Impression]);
        assert_eq!(r.users[0].events[0].ts, 20);
    }
}
