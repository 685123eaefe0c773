use std::fmt::Write as _;

use thiserror::Error;

use super::{Index, KeyState};
use crate::model::{PostingEntry, ResourceId, TagKey, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotRecord {
    pub key: TagKey,
    pub state: KeyState,
    pub last_update_ts: Timestamp,
    pub entries: Vec<(ResourceId, PostingEntry)>,
}

impl SnapshotRecord {
    pub fn live_len(&self) -> usize {
        self.entries.iter().filter(|(_, e)| !e.deleted).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("snapshot line {line}: {reason}")]
pub struct SnapshotError {
    pub line: usize,
    pub reason: String,
}

pub(super) fn dump(index: &Index) -> String {
    let mut out = String::new();
    for (key, entry) in index.keys() {
        let (state, ts) = match (&entry.state, &entry.list) {
            (KeyState::Available, Some(l)) => ("available", l.last_update_ts),
            _ => ("suspended", 0),
        };
        let _ = write!(out, "{key}\t{state}\t{ts}\t");
        if let Some(list) = &entry.list {
            let mut first = true;
            for (r, e) in list.entries() {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{r}:{}", e.ts);
                if e.deleted {
                    out.push_str(":D");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_snapshot(text: &str) -> Result<Vec<SnapshotRecord>, SnapshotError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| SnapshotError {
            line: n + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        let terms: Vec<&str> = fields[0].split(' ').collect();
        let key =
            TagKey::new(terms.iter().copied(), usize::MAX).map_err(|e| err(&e.to_string()))?;
        let state = match fields[1] {
            "available" => KeyState::Available,
            "suspended" => KeyState::Suspended,
            _ => return Err(err("bad state")),
        };
        let last_update_ts = fields[2].parse().map_err(|_| err("bad timestamp"))?;
        let mut entries = Vec::new();
        if !fields[3].is_empty() {
            for item in fields[3].split(',') {
                let parts: Vec<&str> = item.split(':').collect();
                let deleted = match parts.as_slice() {
                    [_, _] => false,
                    [_, _, "D"] => true,
                    _ => return Err(err("bad entry")),
                };
                let r = parts[0].parse().map_err(|_| err("bad resource id"))?;
                let ts = parts[1].parse().map_err(|_| err("bad entry timestamp"))?;
                entries.push((ResourceId(r), PostingEntry { ts, deleted }));
            }
        }
        out.push(SnapshotRecord {
            key,
            state,
            last_update_ts,
            entries,
        });
    }
    Ok(out)
}
