//! The distributed inverted index as stored on the back-end nodes.
//!
//! Every key (single- or multi-term) has an entry holding its availability,
//! its popularity vector and, when available, its posting list. Single-term
//! keys are always available and keep tombstones for deleted resources so
//! that multi-term keys can be refreshed from timestamped deltas.

mod snapshot;
mod update;

pub use snapshot::{parse_snapshot, SnapshotError, SnapshotRecord};
pub use update::UpdateReport;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PostingEntry, PostingList, ResourceId, ResourceSet, TagKey, Timestamp};
use crate::popularity::PopularityVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyState {
    Available,
    Suspended,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyEntry {
    pub state: KeyState,
    pub popularity: PopularityVector,
    /// Present iff the key is available.
    pub list: Option<PostingList>,
    /// Set while at least one gateway holds a copy.
    pub cached: bool,
}

impl KeyEntry {
    pub fn is_available(&self) -> bool {
        self.state == KeyState::Available
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagAction {
    Add,
    Delete,
}

/// What a single-term update did to the list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplyOutcome {
    Inserted,
    /// A tombstoned entry was made live again.
    Unmarked,
    /// A live entry was tombstoned.
    Marked,
    /// Delete of an absent/already deleted resource, or add of a live one.
    Anomaly,
}

impl ApplyOutcome {
    /// Whether the live view of the list changed.
    pub fn changed_live(&self) -> bool {
        !matches!(self, ApplyOutcome::Anomaly)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("key {0} is not available")]
    Unavailable(TagKey),
    #[error("single-term key {0} cannot be suspended")]
    Forbidden(TagKey),
    #[error("key {0} is not a multi-term key")]
    NotMultiTerm(TagKey),
    #[error("key {0} is not a single-term key")]
    NotSingleTerm(TagKey),
    #[error("update of {key} aborted: constituent {constituent} unavailable")]
    UpdateAborted { key: TagKey, constituent: TagKey },
}

/// Resources added to / tombstoned in a single-term list after a reference
/// timestamp.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSet {
    pub adds: ResourceSet,
    pub dels: ResourceSet,
    pub reference_ts: Timestamp,
}

impl DeltaSet {
    pub fn is_empty(&self) -> bool {
        self.adds.is_empty() && self.dels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.adds.len() + self.dels.len()
    }
}

/// The union of all back-end shards. Placement onto nodes is the
/// topology's concern; the index only stores key state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Index {
    keys: BTreeMap<TagKey, KeyEntry>,
    ell: u32,
}

impl Index {
    pub fn new(ell: u32) -> Self {
        Index {
            keys: BTreeMap::new(),
            ell,
        }
    }

    pub fn get(&self, key: &TagKey) -> Option<&KeyEntry> {
        self.keys.get(key)
    }

    pub fn get_mut(&mut self, key: &TagKey) -> Option<&mut KeyEntry> {
        self.keys.get_mut(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&TagKey, &KeyEntry)> {
        self.keys.iter()
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&TagKey, &mut KeyEntry)> {
        self.keys.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Returns the entry for `key`, creating it on first sight: single-term
    /// keys start available with an empty list, multi-term keys suspended.
    pub fn ensure(&mut self, key: &TagKey) -> &mut KeyEntry {
        let ell = self.ell;
        self.keys.entry(key.clone()).or_insert_with(|| {
            if key.is_single() {
                KeyEntry {
                    state: KeyState::Available,
                    popularity: PopularityVector::new(ell),
                    list: Some(PostingList::new(0)),
                    cached: false,
                }
            } else {
                KeyEntry {
                    state: KeyState::Suspended,
                    popularity: PopularityVector::new(ell),
                    list: None,
                    cached: false,
                }
            }
        })
    }

    /// Applies an add/delete of `resource` to the single-term key of `term`.
    pub fn apply_tag_action(
        &mut self,
        term: &str,
        resource: ResourceId,
        action: TagAction,
        now: Timestamp,
    ) -> ApplyOutcome {
        assert!(!term.is_empty(), "empty term");
        let entry = self.ensure(&TagKey::single(term));
        let list = entry
            .list
            .as_mut()
            .expect("single-term keys are always available");
        let entries = list.entries_mut();
        match (action, entries.get_mut(&resource)) {
            (TagAction::Add, None) => {
                entries.insert(
                    resource,
                    PostingEntry {
                        ts: now,
                        deleted: false,
                    },
                );
                ApplyOutcome::Inserted
            }
            (TagAction::Add, Some(e)) if e.deleted => {
                *e = PostingEntry {
                    ts: now,
                    deleted: false,
                };
                ApplyOutcome::Unmarked
            }
            (TagAction::Delete, Some(e)) if !e.deleted => {
                *e = PostingEntry {
                    ts: now,
                    deleted: true,
                };
                ApplyOutcome::Marked
            }
            _ => ApplyOutcome::Anomaly,
        }
    }

    /// Live size, or `None` if the key is suspended or unknown.
    pub fn get_result_size(&self, key: &TagKey) -> Option<usize> {
        self.keys
            .get(key)
            .and_then(|e| e.list.as_ref())
            .map(PostingList::live_size)
    }

    pub fn get_inverted_list(&self, key: &TagKey) -> Result<ResourceSet, IndexError> {
        self.keys
            .get(key)
            .and_then(|e| e.list.as_ref())
            .map(PostingList::live_set)
            .ok_or_else(|| IndexError::Unavailable(key.clone()))
    }

    /// Drops the list of a multi-term key and marks it suspended. The
    /// popularity vector is kept. Suspending a suspended key is a no-op.
    pub fn suspend_key(&mut self, key: &TagKey) -> Result<(), IndexError> {
        if key.is_single() {
            return Err(IndexError::Forbidden(key.clone()));
        }
        let entry = self
            .keys
            .get_mut(key)
            .ok_or_else(|| IndexError::Unavailable(key.clone()))?;
        entry.state = KeyState::Suspended;
        entry.list = None;
        Ok(())
    }

    /// Stores a freshly computed list for a multi-term key and marks it
    /// available.
    pub(crate) fn install(&mut self, key: &TagKey, live: &ResourceSet, now: Timestamp) {
        let entry = self.ensure(key);
        entry.state = KeyState::Available;
        entry.list = Some(PostingList::from_live(live, now));
    }

    /// Removes tombstones older than `delta_update` from all single-term
    /// lists; returns how many entries were dropped.
    pub fn gc_tombstones(&mut self, now: Timestamp, delta_update: Timestamp) -> usize {
        let mut removed = 0;
        for (key, entry) in self.keys.iter_mut() {
            if !key.is_single() {
                continue;
            }
            if let Some(list) = entry.list.as_mut() {
                let entries = list.entries_mut();
                let before = entries.len();
                entries.retain(|_, e| !(e.deleted && now.saturating_sub(e.ts) >= delta_update));
                removed += before - entries.len();
            }
        }
        removed
    }

    /// Live entries newer than `reference_ts` (adds) and tombstones newer
    /// than it (dels) in a single-term list.
    pub fn compute_delta(
        &self,
        key: &TagKey,
        reference_ts: Timestamp,
    ) -> Result<DeltaSet, IndexError> {
        if !key.is_single() {
            return Err(IndexError::NotSingleTerm(key.clone()));
        }
        let list = self
            .keys
            .get(key)
            .and_then(|e| e.list.as_ref())
            .ok_or_else(|| IndexError::Unavailable(key.clone()))?;
        let mut delta = DeltaSet {
            reference_ts,
            ..DeltaSet::default()
        };
        for (&r, e) in list.entries() {
            if e.ts > reference_ts {
                if e.deleted {
                    delta.dels.insert(r);
                } else {
                    delta.adds.insert(r);
                }
            }
        }
        Ok(delta)
    }

    /// Line-oriented dump: `terms<TAB>state<TAB>last_update_ts<TAB>r:ts[:D],...`.
    pub fn to_snapshot(&self) -> String {
        snapshot::dump(self)
    }
}
