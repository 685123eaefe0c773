//! Query execution: direct hits, size probes and the intersection chain.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{compute_key_access_list, compute_subset_keys, AvailableKey, KeyAccessPlan, PlanStep};
use crate::cache::responsible_gateway;
use crate::model::{Query, ResourceSet, TagKey};
use crate::simnet::{Cause, Cluster, NodeId};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryOutcome {
    pub result: ResourceSet,
    pub gateway: u32,
    /// Index contacts that returned only a size (including a failed direct
    /// attempt on the query's own key).
    pub probes: u64,
    /// Resources transferred between distinct nodes while answering.
    pub tr: u64,
    pub direct_hit: bool,
    pub plan: Vec<TagKey>,
}

impl Cluster {
    /// Answers a conjunctive query on its responsible gateway. Keys requested
    /// along the way are classified afterwards, so resumes and cache inserts
    /// triggered by this query take effect for later ones.
    pub fn handle_query_request(&mut self, q: &Query) -> QueryOutcome {
        let tr_before = self.ledger.total.tr;
        let g = responsible_gateway(q.terms(), self.cfg.n_gateways);
        let gw = NodeId::Gateway(g);
        self.ledger.queries += 1;
        let mut out = QueryOutcome {
            gateway: g,
            ..QueryOutcome::default()
        };
        let mut requested: BTreeSet<TagKey> = BTreeSet::new();
        let s_max = self.cfg.effective_s_max();
        let direct_key = q.as_key(s_max);

        let mut answered = None;
        if let Some(kq) = &direct_key {
            if let Some(hit) = self.cache_lookup(g, kq) {
                answered = Some(hit);
            } else {
                let node = self.topology.node_for_key(kq);
                let entry = self.index.ensure(kq);
                entry.popularity = entry.popularity.record_request();
                requested.insert(kq.clone());
                match self.index.get_inverted_list(kq) {
                    Ok(list) => {
                        self.ledger.account_key_access(Cause::Query, true);
                        self.ledger
                            .account_local(node, list.len() as u64, Cause::Query);
                        self.ledger.account_message(gw, node, 0, Cause::Query);
                        self.ledger
                            .account_message(node, gw, list.len() as u64, Cause::Query);
                        answered = Some(list);
                    }
                    Err(_) => {
                        self.ledger.account_probe(gw, node, Cause::Query);
                        out.probes += 1;
                    }
                }
            }
        }

        if let Some(result) = answered {
            out.direct_hit = true;
            out.result = result;
        } else {
            let mut avail = Vec::new();
            let mut any_empty = false;
            for key in compute_subset_keys(q.terms(), s_max) {
                if Some(&key) == direct_key.as_ref() {
                    continue;
                }
                if let Some(size) = self.cache_probe(g, &key) {
                    any_empty |= size == 0;
                    avail.push(AvailableKey {
                        key,
                        size,
                        cached: true,
                    });
                    continue;
                }
                let node = self.topology.node_for_key(&key);
                self.ledger.account_probe(gw, node, Cause::Query);
                out.probes += 1;
                let entry = self.index.ensure(&key);
                entry.popularity = entry.popularity.record_request();
                requested.insert(key.clone());
                if let Some(size) = self.index.get_result_size(&key) {
                    any_empty |= size == 0;
                    avail.push(AvailableKey {
                        key,
                        size,
                        cached: false,
                    });
                }
            }
            if !any_empty {
                let plan = compute_key_access_list(q.terms(), &avail, &mut self.rng);
                out.plan = plan.keys().cloned().collect();
                out.result = self.execute_chain(&plan, gw, gw, Some(g), Cause::Query).0;
            }
        }
        out.tr = self.ledger.total.tr - tr_before;
        for key in requested {
            self.after_request(&key, q.arrival);
        }
        out
    }

    /// Reads one plan step's list, from the gateway cache when the step says
    /// so, otherwise from the index. Returns the node holding the list.
    pub fn handle_key_list(
        &mut self,
        step: &PlanStep,
        gateway: Option<u32>,
        cause: Cause,
    ) -> (NodeId, ResourceSet) {
        if step.use_cache {
            if let Some(g) = gateway {
                if let Some(list) = self.gateways[g as usize].get(&step.key) {
                    let list = list.clone();
                    let node = NodeId::Gateway(g);
                    self.ledger.account_local(node, list.len() as u64, cause);
                    return (node, list);
                }
            }
        }
        let node = self.topology.node_for_key(&step.key);
        let list = self
            .index
            .get_inverted_list(&step.key)
            .expect("plan keys are available");
        self.ledger.account_key_access(cause, true);
        self.ledger.account_local(node, list.len() as u64, cause);
        (node, list)
    }

    /// Runs the chain: the intermediate result travels from list holder to
    /// list holder, stopping early once it is empty, and finally to `dest`.
    /// Returns the result and the number of messages sent.
    pub fn execute_chain(
        &mut self,
        plan: &KeyAccessPlan,
        origin: NodeId,
        dest: NodeId,
        gateway: Option<u32>,
        cause: Cause,
    ) -> (ResourceSet, usize) {
        let mut prev = origin;
        let mut result: Option<ResourceSet> = None;
        let mut hops = 0;
        for step in &plan.steps {
            let (holder, list) = self.handle_key_list(step, gateway, cause);
            let carried = result.as_ref().map_or(0, |r| r.len() as u64);
            self.ledger.account_message(prev, holder, carried, cause);
            hops += 1;
            prev = holder;
            let next = match result {
                None => list,
                Some(r) => r.intersection(&list).copied().collect(),
            };
            let empty = next.is_empty();
            result = Some(next);
            if empty {
                break;
            }
        }
        let result = result.unwrap_or_default();
        self.ledger
            .account_message(prev, dest, result.len() as u64, cause);
        (result, hops + 1)
    }
}

#[cfg(test)]
mod tests {
    use crate::index::TagAction;
    use crate::model::{IndexMode, Query, ResourceId, ResourceSet, SystemConfig, TagKey};
    use crate::simnet::{Cause, Cluster};

    fn set(ids: &[u32]) -> ResourceSet {
        ids.iter().map(|&i| ResourceId(i)).collect()
    }

    fn cluster(mode: IndexMode) -> Cluster {
        let mut c = Cluster::new(SystemConfig {
            mode,
            n_gateways: 1,
            ..SystemConfig::default()
        })
        .unwrap();
        for i in [1, 2, 3] {
            c.index
                .apply_tag_action("a", ResourceId(i), TagAction::Add, 0);
        }
        for i in [1, 3] {
            c.index
                .apply_tag_action("b", ResourceId(i), TagAction::Add, 0);
        }
        c
    }

    #[test]
    fn stk_chain_trace() {
        let mut c = cluster(IndexMode::Stk);
        let out = c.handle_query_request(&Query::new(["a", "b"], 1).unwrap());
        assert_eq!(out.result, set(&[1, 3]));
        // b's 2 resources to a's node, 2 results back to the gateway
        assert_eq!(out.tr, 4);
        assert_eq!(out.probes, 2);
        assert_eq!(c.ledger.total.ck, 4);
        assert_eq!(c.ledger.total.ik, 2);
    }

    #[test]
    fn direct_hit_on_available_key() {
        let mut c = cluster(IndexMode::Mtk);
        let ab = TagKey::new(["a", "b"], 3).unwrap();
        c.resume_key(&ab, 0).unwrap();
        c.reset_ledger();
        let out = c.handle_query_request(&Query::new(["b", "a"], 1).unwrap());
        assert!(out.direct_hit);
        assert_eq!(out.result, set(&[1, 3]));
        assert_eq!(out.tr, 2);
        assert_eq!(out.probes, 0);
        assert_eq!(c.ledger.cause(Cause::Query).ik, 1);
    }

    #[test]
    fn empty_key_short_circuits() {
        let mut c = cluster(IndexMode::Mtk);
        c.index.ensure(&TagKey::single("z"));
        let out = c.handle_query_request(&Query::new(["a", "z"], 1).unwrap());
        assert!(out.result.is_empty());
        assert_eq!(out.tr, 0);
        assert_eq!(c.ledger.total.ik, 0);
    }

    #[test]
    fn early_termination_skips_remaining_keys() {
        let mut c = cluster(IndexMode::Stk);
        c.index
            .apply_tag_action("x", ResourceId(9), TagAction::Add, 0);
        let out = c.handle_query_request(&Query::new(["a", "b", "x"], 1).unwrap());
        assert!(out.result.is_empty());
        // x (1) ∩ b (2) is empty: a is never read
        assert_eq!(c.ledger.total.ik, 2);
        assert_eq!(out.tr, 1);
    }
}
