//! Resume and incremental update of multi-term keys.
//!
//! Incremental update runs a chain over the key's single-term constituents
//! in lexicographic order. The forward pass filters candidate additions
//! against each live list and appends that list's own additions, tagged with
//! the position they entered the chain. Candidates that entered late have not
//! been checked against earlier lists, so when any exist the chain is walked
//! backwards to filter them before the result reaches the key's node.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{DeltaSet, IndexError};
use crate::model::{ResourceId, ResourceSet, TagKey, Timestamp};
use crate::query::{compute_key_access_list, AvailableKey};
use crate::simnet::{Cause, Cluster, NodeId};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct UpdateReport {
    /// Net change applied to the multi-term list.
    pub delta: DeltaSet,
    /// Largest per-constituent change count `|R⊕| + |R⊖|`.
    pub r_max: usize,
    /// Resources carried by each message, in sending order.
    pub hops: Vec<u64>,
    /// Resources transferred between distinct nodes.
    pub tr: u64,
    pub backward_pass: bool,
}

impl Cluster {
    /// Computes a multi-term key's list from scratch as the intersection of
    /// its constituents and marks it available.
    pub fn resume_key(&mut self, key: &TagKey, now: Timestamp) -> Result<(), IndexError> {
        if key.is_single() {
            return Err(IndexError::NotMultiTerm(key.clone()));
        }
        let home = self.topology.node_for_key(key);
        let mut avail = Vec::with_capacity(key.len());
        let mut any_empty = false;
        for c in key.constituents() {
            let node = self.topology.node_for_key(&c);
            self.ledger.account_probe(home, node, Cause::Resume);
            let size = self
                .index
                .ensure(&c)
                .list
                .as_ref()
                .map_or(0, |l| l.live_size());
            any_empty |= size == 0;
            avail.push(AvailableKey {
                key: c,
                size,
                cached: false,
            });
        }
        let result = if any_empty {
            ResourceSet::new()
        } else {
            let plan = compute_key_access_list(key.terms(), &avail, &mut self.rng);
            self.execute_chain(&plan, home, home, None, Cause::Resume).0
        };
        self.ledger.account_key_access(Cause::Resume, false);
        self.ledger
            .account_local(home, result.len() as u64, Cause::Resume);
        self.index.install(key, &result, now);
        Ok(())
    }

    /// Brings an available multi-term key up to date with the changes of its
    /// constituents since its last update, then pushes the net change to any
    /// gateway caching it.
    pub fn incremental_update(
        &mut self,
        key: &TagKey,
        now: Timestamp,
    ) -> Result<UpdateReport, IndexError> {
        if key.is_single() {
            return Err(IndexError::NotMultiTerm(key.clone()));
        }
        let old_ts = match self.index.get(key).and_then(|e| e.list.as_ref()) {
            Some(l) => l.last_update_ts,
            None => return Err(IndexError::Unavailable(key.clone())),
        };
        let cause = Cause::IncrementalUpdate;
        let home = self.topology.node_for_key(key);
        let constituents: Vec<TagKey> = key.constituents().collect();
        let nodes: Vec<NodeId> = constituents
            .iter()
            .map(|c| self.topology.node_for_key(c))
            .collect();
        let mut lives = Vec::with_capacity(constituents.len());
        let mut deltas = Vec::with_capacity(constituents.len());
        for c in &constituents {
            self.index.ensure(c);
            deltas.push(self.index.compute_delta(c, old_ts)?);
            lives.push(self.index.get_inverted_list(c)?);
        }

        let mut report = UpdateReport::default();
        let send =
            |c: &mut Cluster, report: &mut UpdateReport, from: NodeId, to: NodeId, n: u64| {
                c.ledger.account_message(from, to, n, cause);
                report.hops.push(n);
                if from != to {
                    report.tr += n;
                }
            };

        // request carrying the reference timestamp
        send(self, &mut report, home, nodes[0], 0);

        let mut adds: BTreeMap<ResourceId, usize> = BTreeMap::new();
        let mut dels = ResourceSet::new();
        let s = constituents.len();
        for i in 0..s {
            self.ledger.account_key_access(cause, true);
            let d = &deltas[i];
            self.ledger.account_local(nodes[i], d.len() as u64, cause);
            report.r_max = report.r_max.max(d.len());
            adds.retain(|r, _| lives[i].contains(r));
            for &r in &d.adds {
                adds.entry(r).or_insert(i);
            }
            dels.extend(d.dels.iter().copied());
            if i + 1 < s {
                send(
                    self,
                    &mut report,
                    nodes[i],
                    nodes[i + 1],
                    (adds.len() + dels.len()) as u64,
                );
            }
        }
        let mut last = nodes[s - 1];
        if adds.values().any(|&o| o > 0) {
            report.backward_pass = true;
            for p in (0..s - 1).rev() {
                send(
                    self,
                    &mut report,
                    last,
                    nodes[p],
                    (adds.len() + dels.len()) as u64,
                );
                adds.retain(|r, &mut origin| origin <= p || lives[p].contains(r));
                last = nodes[p];
            }
        }
        send(
            self,
            &mut report,
            last,
            home,
            (adds.len() + dels.len()) as u64,
        );

        let entry = self.index.get_mut(key).expect("checked above");
        let list = entry.list.as_mut().expect("checked above");
        let mut net = DeltaSet {
            reference_ts: old_ts,
            ..DeltaSet::default()
        };
        for r in dels {
            if list.entries_mut().remove(&r).is_some() {
                net.dels.insert(r);
            }
        }
        for &r in adds.keys() {
            if !list.is_live(r) {
                list.entries_mut().insert(
                    r,
                    crate::model::PostingEntry {
                        ts: now,
                        deleted: false,
                    },
                );
                net.adds.insert(r);
            }
        }
        list.last_update_ts = now;
        self.ledger.account_key_access(cause, false);
        self.ledger.account_local(home, net.len() as u64, cause);
        report.delta = net;
        let cached = entry.cached;
        if cached {
            self.propagate_incremental_result(key, &report.delta);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::TagAction;
    use crate::model::SystemConfig;

    fn r(i: u32) -> ResourceId {
        ResourceId(i)
    }

    fn set(ids: &[u32]) -> ResourceSet {
        ids.iter().map(|&i| r(i)).collect()
    }

    fn cluster() -> Cluster {
        Cluster::new(SystemConfig::default()).unwrap()
    }

    #[test]
    fn resume_intersects_constituents() {
        let mut c = cluster();
        for i in [1, 2, 3] {
            c.index.apply_tag_action("a", r(i), TagAction::Add, 1);
        }
        for i in [1, 3] {
            c.index.apply_tag_action("b", r(i), TagAction::Add, 1);
        }
        let ab = TagKey::new(["a", "b"], 3).unwrap();
        c.resume_key(&ab, 7).unwrap();
        let e = c.index.get(&ab).unwrap();
        assert!(e.is_available());
        assert_eq!(e.list.as_ref().unwrap().live_set(), set(&[1, 3]));
        assert_eq!(e.list.as_ref().unwrap().last_update_ts, 7);
        // b's two resources to a, two results back home
        assert_eq!(c.ledger.cause(Cause::Resume).tr, 4);

        let az = TagKey::new(["a", "z"], 3).unwrap();
        c.resume_key(&az, 8).unwrap();
        assert_eq!(c.index.get_result_size(&az), Some(0));
        assert!(c.resume_key(&TagKey::single("a"), 9).is_err());
    }

    #[test]
    fn update_matches_worked_example() {
        let mut c = cluster();
        let ab = TagKey::new(["a", "b"], 3).unwrap();
        c.index.apply_tag_action("a", r(1), TagAction::Add, 5);
        c.index.apply_tag_action("a", r(3), TagAction::Add, 8);
        c.index.apply_tag_action("b", r(1), TagAction::Add, 6);
        c.index.apply_tag_action("b", r(3), TagAction::Add, 6);
        c.resume_key(&ab, 20).unwrap();
        assert_eq!(c.index.get_inverted_list(&ab).unwrap(), set(&[1, 3]));
        c.index.apply_tag_action("b", r(3), TagAction::Delete, 23);
        c.index.apply_tag_action("a", r(2), TagAction::Add, 25);

        let rep = c.incremental_update(&ab, 30).unwrap();
        assert_eq!(c.index.get_inverted_list(&ab).unwrap(), set(&[1]));
        assert_eq!(rep.delta.dels, set(&[3]));
        assert!(rep.delta.adds.is_empty());
        assert_eq!(
            c.index
                .get(&ab)
                .unwrap()
                .list
                .as_ref()
                .unwrap()
                .last_update_ts,
            30
        );

        let rep = c.incremental_update(&ab, 31).unwrap();
        assert!(rep.delta.is_empty());
        assert!(!rep.backward_pass);
        assert_eq!(c.index.get_inverted_list(&ab).unwrap(), set(&[1]));
    }

    #[test]
    fn late_additions_are_checked_backwards() {
        let mut c = cluster();
        let ab = TagKey::new(["a", "b"], 3).unwrap();
        c.index.apply_tag_action("a", r(1), TagAction::Add, 1);
        c.index.apply_tag_action("a", r(3), TagAction::Add, 2);
        c.index.apply_tag_action("b", r(1), TagAction::Add, 1);
        c.resume_key(&ab, 10).unwrap();
        // r2 new in b only; r3 old in a, new in b
        c.index.apply_tag_action("b", r(2), TagAction::Add, 12);
        c.index.apply_tag_action("b", r(3), TagAction::Add, 13);
        let rep = c.incremental_update(&ab, 20).unwrap();
        assert!(rep.backward_pass);
        assert_eq!(rep.delta.adds, set(&[3]));
        assert_eq!(c.index.get_inverted_list(&ab).unwrap(), set(&[1, 3]));
    }

    #[test]
    fn update_requires_available_multi_term_key() {
        let mut c = cluster();
        let ab = TagKey::new(["a", "b"], 3).unwrap();
        c.index.ensure(&ab);
        assert_eq!(
            c.incremental_update(&ab, 1),
            Err(IndexError::Unavailable(ab))
        );
        assert!(matches!(
            c.incremental_update(&TagKey::single("a"), 1),
            Err(IndexError::NotMultiTerm(_))
        ));
    }
}
