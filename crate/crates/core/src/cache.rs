//! Gateway nodes: query routing and the key cache.
//!
//! Caches hold live resource sets only. Under uniform caching every gateway
//! holds a copy of each cached key; under dedicated caching only the key's
//! responsible gateway does. Cache hits are not reported to the back end
//! right away; they are counted per gateway and flushed into the keys'
//! popularity vectors at the next decay tick.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::Hasher;

use fnv::FnvHasher;

use crate::index::{DeltaSet, IndexError};
use crate::model::{CacheScheme, ResourceId, ResourceSet, TagKey};
use crate::simnet::{Cause, Cluster, NodeId};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GatewayNode {
    pub id: u32,
    cache: BTreeMap<TagKey, ResourceSet>,
    pending_hits: BTreeMap<TagKey, u32>,
}

impl GatewayNode {
    pub fn new(id: u32) -> Self {
        GatewayNode {
            id,
            ..GatewayNode::default()
        }
    }

    pub fn get(&self, key: &TagKey) -> Option<&ResourceSet> {
        self.cache.get(key)
    }

    pub fn cached_keys(&self) -> impl Iterator<Item = (&TagKey, &ResourceSet)> {
        self.cache.iter()
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub(crate) fn take_pending_hits(&mut self) -> BTreeMap<TagKey, u32> {
        std::mem::take(&mut self.pending_hits)
    }

    /// `key-terms<TAB>cached<TAB>gateway<TAB>resource[,resource...]`
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for (key, set) in &self.cache {
            let ids: Vec<String> = set.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "{key}\tcached\tgw{}\t{}", self.id, ids.join(","));
        }
        out
    }
}

/// FNV-1a over the terms, each followed by a 0 byte.
pub fn stable_hash(terms: &[String]) -> u64 {
    let mut h = FnvHasher::default();
    for t in terms {
        h.write(t.as_bytes());
        h.write_u8(0);
    }
    h.finish()
}

/// Gateway responsible for a key or for the key derived from a query (the
/// terms must be in canonical sorted order).
pub fn responsible_gateway(terms: &[String], n_gateways: u32) -> u32 {
    assert!(n_gateways >= 1);
    (stable_hash(terms) % n_gateways as u64) as u32
}

impl Cluster {
    /// Gateways that hold (or would hold) a copy of `key`.
    pub fn holders(&self, key: &TagKey) -> Vec<u32> {
        match self.cfg.cache_scheme {
            CacheScheme::None => Vec::new(),
            CacheScheme::Uniform => (0..self.cfg.n_gateways).collect(),
            CacheScheme::Dedicated => vec![responsible_gateway(key.terms(), self.cfg.n_gateways)],
        }
    }

    fn note_hit(&mut self, g: u32, key: &TagKey) {
        self.ledger.cache_hits += 1;
        *self.gateways[g as usize]
            .pending_hits
            .entry(key.clone())
            .or_default() += 1;
    }

    /// Looks up a whole list in gateway `g`'s own cache.
    pub(crate) fn cache_lookup(&mut self, g: u32, key: &TagKey) -> Option<ResourceSet> {
        if !self.cfg.caching() {
            return None;
        }
        self.ledger.gw_lookups += 1;
        let hit = self.gateways[g as usize].cache.get(key).cloned()?;
        self.note_hit(g, key);
        self.ledger
            .account_local(NodeId::Gateway(g), hit.len() as u64, Cause::Query);
        Some(hit)
    }

    /// Answers a size probe from gateway `g`'s own cache.
    pub(crate) fn cache_probe(&mut self, g: u32, key: &TagKey) -> Option<usize> {
        if !self.cfg.caching() {
            return None;
        }
        self.ledger.gw_lookups += 1;
        let size = self.gateways[g as usize].cache.get(key)?.len();
        self.note_hit(g, key);
        Some(size)
    }

    /// Copies an available key's list to its holder gateways.
    pub fn cache_insert(&mut self, key: &TagKey) -> Result<(), IndexError> {
        let list = self.index.get_inverted_list(key)?;
        let holders = self.holders(key);
        if holders.is_empty() {
            return Ok(());
        }
        let cause = Cause::CacheMaintenance;
        let node = self.topology.node_for_key(key);
        self.ledger.account_key_access(cause, true);
        self.ledger.account_local(node, list.len() as u64, cause);
        for g in holders {
            self.ledger
                .account_message(node, NodeId::Gateway(g), list.len() as u64, cause);
            self.gateways[g as usize]
                .cache
                .insert(key.clone(), list.clone());
        }
        self.index.ensure(key).cached = true;
        Ok(())
    }

    /// Removes `key` from every gateway holding it. No-op if uncached.
    pub fn cache_evict(&mut self, key: &TagKey) {
        match self.index.get_mut(key) {
            Some(e) if e.cached => e.cached = false,
            _ => return,
        }
        let node = self.topology.node_for_key(key);
        for g in 0..self.gateways.len() {
            if self.gateways[g].cache.remove(key).is_some() {
                self.ledger.account_message(
                    node,
                    NodeId::Gateway(g as u32),
                    0,
                    Cause::CacheMaintenance,
                );
            }
        }
    }

    /// Forwards one added/removed resource of a cached single-term list.
    pub fn propagate_single_term_update(&mut self, key: &TagKey, r: ResourceId, added: bool) {
        if !self.index.get(key).is_some_and(|e| e.cached) {
            return;
        }
        let node = self.topology.node_for_key(key);
        for g in self.holders(key) {
            if let Some(set) = self.gateways[g as usize].cache.get_mut(key) {
                if added {
                    set.insert(r);
                } else {
                    set.remove(&r);
                }
                self.ledger
                    .account_message(node, NodeId::Gateway(g), 1, Cause::CacheMaintenance);
            }
        }
    }

    /// Forwards the net result of an incremental update; empty deltas send
    /// nothing.
    pub fn propagate_incremental_result(&mut self, key: &TagKey, delta: &DeltaSet) {
        if delta.is_empty() || !self.index.get(key).is_some_and(|e| e.cached) {
            return;
        }
        let node = self.topology.node_for_key(key);
        for g in self.holders(key) {
            if let Some(set) = self.gateways[g as usize].cache.get_mut(key) {
                for r in &delta.dels {
                    set.remove(r);
                }
                set.extend(delta.adds.iter().copied());
                self.ledger.account_message(
                    node,
                    NodeId::Gateway(g),
                    delta.len() as u64,
                    Cause::CacheMaintenance,
                );
            }
        }
    }

    fn is_holder(&self, key: &TagKey, g: u32) -> bool {
        match self.cfg.cache_scheme {
            CacheScheme::None => false,
            CacheScheme::Uniform => true,
            CacheScheme::Dedicated => responsible_gateway(key.terms(), self.cfg.n_gateways) == g,
        }
    }

    /// Checks that every cached copy equals the index's live list, that
    /// cached keys are available, and that copies sit exactly on the holders.
    /// Walks each gateway cache alongside the (sorted) index.
    pub fn check_cache_coherence(&self) -> Result<(), String> {
        for gw in &self.gateways {
            let mut copies = gw.cache.iter().peekable();
            for (key, entry) in self.index.keys() {
                if let Some((k, _)) = copies.peek() {
                    if *k < key {
                        return Err(format!("gw{} caches unknown key {k:?}", gw.id));
                    }
                }
                let copy = match copies.peek() {
                    Some((k, _)) if *k == key => copies.next().map(|(_, s)| s),
                    _ => None,
                };
                if !entry.cached && copy.is_none() {
                    continue;
                }
                let holder = self.is_holder(key, gw.id);
                let Some(set) = copy else {
                    if holder {
                        return Err(format!("{key:?} flagged cached but missing on gw{}", gw.id));
                    }
                    continue;
                };
                if !entry.cached {
                    return Err(format!(
                        "gw{} caches {key:?} but the index flag is clear",
                        gw.id
                    ));
                }
                if !holder {
                    return Err(format!("gw{} caches {key:?} but is not a holder", gw.id));
                }
                match &entry.list {
                    None => return Err(format!("gw{} caches suspended key {key:?}", gw.id)),
                    Some(l) if !l.live().eq(set.iter().copied()) => {
                        return Err(format!("gw{} holds a stale copy of {key:?}", gw.id))
                    }
                    _ => {}
                }
            }
            if let Some((k, _)) = copies.next() {
                return Err(format!("gw{} caches unknown key {k:?}", gw.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::TagAction;
    use crate::model::SystemConfig;

    fn cluster(scheme: CacheScheme, n: u32) -> Cluster {
        let mut c = Cluster::new(SystemConfig {
            cache_scheme: scheme,
            n_gateways: n,
            ..SystemConfig::default()
        })
        .unwrap();
        for i in 1..=3 {
            c.index
                .apply_tag_action("a", ResourceId(i), TagAction::Add, 0);
        }
        c
    }

    fn a() -> TagKey {
        TagKey::single("a")
    }

    #[test]
    fn routing_is_stable_and_spread() {
        let k = vec!["x".to_string(), "y".to_string()];
        assert_eq!(responsible_gateway(&k, 1), 0);
        assert_eq!(responsible_gateway(&k, 5), responsible_gateway(&k, 5));
        let mut counts = [0u32; 5];
        for i in 0..10_000 {
            counts[responsible_gateway(&[format!("term{i}")], 5) as usize] += 1;
        }
        for c in counts {
            assert!((1500..=2500).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn dedicated_places_one_copy() {
        let mut c = cluster(CacheScheme::Dedicated, 5);
        c.cache_insert(&a()).unwrap();
        let holding: Vec<u32> = c
            .gateways
            .iter()
            .filter(|g| g.get(&a()).is_some())
            .map(|g| g.id)
            .collect();
        assert_eq!(holding, vec![responsible_gateway(a().terms(), 5)]);
        assert_eq!(c.ledger.total.tr, 3);
        let g = holding[0];
        assert_eq!(c.cache_lookup(g, &a()).unwrap().len(), 3);
    }

    #[test]
    fn uniform_places_every_copy() {
        let mut c = cluster(CacheScheme::Uniform, 5);
        c.cache_insert(&a()).unwrap();
        assert!(c
            .gateways
            .iter()
            .all(|g| g.get(&a()).map(|s| s.len()) == Some(3)));
        assert_eq!(c.ledger.cause(Cause::CacheMaintenance).tr, 15);
        c.check_cache_coherence().unwrap();
    }

    #[test]
    fn evict_and_noop_evict() {
        let mut c = cluster(CacheScheme::Uniform, 2);
        c.cache_insert(&a()).unwrap();
        c.cache_evict(&a());
        assert!(c.cache_lookup(0, &a()).is_none());
        assert!(!c.index.get(&a()).unwrap().cached);
        let before = c.ledger.clone();
        c.cache_evict(&a());
        assert_eq!(c.ledger, before);
    }

    #[test]
    fn single_term_propagation() {
        let mut c = cluster(CacheScheme::Dedicated, 3);
        let before = c.ledger.total.tr;
        c.propagate_single_term_update(&a(), ResourceId(5), true);
        assert_eq!(c.ledger.total.tr, before);
        c.cache_insert(&a()).unwrap();
        c.index
            .apply_tag_action("a", ResourceId(5), TagAction::Add, 1);
        c.propagate_single_term_update(&a(), ResourceId(5), true);
        c.index
            .apply_tag_action("a", ResourceId(1), TagAction::Delete, 2);
        c.propagate_single_term_update(&a(), ResourceId(1), false);
        let g = responsible_gateway(a().terms(), 3);
        let set = c.gateways[g as usize].get(&a()).unwrap();
        assert!(set.contains(&ResourceId(5)) && !set.contains(&ResourceId(1)));
        c.check_cache_coherence().unwrap();
    }

    #[test]
    fn incremental_propagation() {
        let mut c = cluster(CacheScheme::Uniform, 2);
        c.cache_insert(&a()).unwrap();
        let msgs = c.ledger.total.messages;
        c.propagate_incremental_result(&a(), &DeltaSet::default());
        assert_eq!(c.ledger.total.messages, msgs);
        c.index
            .apply_tag_action("a", ResourceId(2), TagAction::Delete, 3);
        c.index
            .apply_tag_action("a", ResourceId(7), TagAction::Add, 3);
        let delta = DeltaSet {
            adds: [ResourceId(7)].into_iter().collect(),
            dels: [ResourceId(2)].into_iter().collect(),
            reference_ts: 0,
        };
        c.propagate_incremental_result(&a(), &delta);
        c.check_cache_coherence().unwrap();
    }

    #[test]
    fn snapshot_format() {
        let mut c = cluster(CacheScheme::Uniform, 1);
        c.cache_insert(&a()).unwrap();
        assert_eq!(c.gateways[0].to_snapshot(), "a\tcached\tgw0\t1,2,3\n");
    }

    #[test]
    fn coherence_check_catches_corruption() {
        let base = || {
            let mut c = cluster(CacheScheme::Dedicated, 3);
            c.index
                .apply_tag_action("b", ResourceId(1), TagAction::Add, 0);
            c.cache_insert(&a()).unwrap();
            c.check_cache_coherence().unwrap();
            c
        };
        let home = responsible_gateway(a().terms(), 3) as usize;
        let other = (home + 1) % 3;

        let mut c = base();
        c.gateways[home]
            .cache
            .get_mut(&a())
            .unwrap()
            .remove(&ResourceId(2));
        assert!(c.check_cache_coherence().unwrap_err().contains("stale"));

        let mut c = base();
        c.gateways[home].cache.remove(&a());
        assert!(c.check_cache_coherence().unwrap_err().contains("missing"));

        let mut c = base();
        let copy = c.gateways[home].cache[&a()].clone();
        c.gateways[other].cache.insert(a(), copy);
        assert!(c
            .check_cache_coherence()
            .unwrap_err()
            .contains("not a holder"));

        let mut c = base();
        c.gateways[home]
            .cache
            .insert(TagKey::single("zz"), ResourceSet::new());
        assert!(c.check_cache_coherence().unwrap_err().contains("unknown"));

        let mut c = base();
        c.gateways[home]
            .cache
            .insert(TagKey::single("b"), ResourceSet::new());
        assert!(c
            .check_cache_coherence()
            .unwrap_err()
            .contains("flag is clear"));
    }
}
