//! Deterministic discrete-event simulation of gateways and back-end nodes.

mod ledger;
mod topology;

pub use ledger::{
    compare_runs, write_csv_rows, Cause, Counters, MetricsLedger, MetricsSummary, NodeId, Relative,
    RelativeReport, CSV_HEADER,
};
pub use topology::Topology;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cache::{stable_hash, GatewayNode};
use crate::index::{Index, KeyState, TagAction, UpdateReport};
use crate::model::{
    derive_considered_tags, ConfigError, Query, ResourceId, ResourceSet, SystemConfig, TagKey,
    Timestamp,
};
use crate::popularity::{classify, KeyStatus};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum EventKind {
    TagAction {
        resource: ResourceId,
        tag: String,
        action: TagAction,
    },
    DecayTick,
    UpdateTick,
    Query(Query),
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::TagAction { .. } => 0,
            EventKind::DecayTick => 1,
            EventKind::UpdateTick => 2,
            EventKind::Query(_) => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Event {
    pub time: Timestamp,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn order_key(&self) -> (Timestamp, u8, u64) {
        (self.time, self.kind.rank(), self.seq)
    }
}

/// Builds an event list from tag actions and queries, numbering them in
/// input order and adding decay and update ticks up to the last event.
pub fn build_events(
    actions: impl IntoIterator<Item = (Timestamp, ResourceId, String, TagAction)>,
    queries: impl IntoIterator<Item = Query>,
    cfg: &SystemConfig,
    with_ticks: bool,
) -> Vec<Event> {
    let mut kinds: Vec<(Timestamp, EventKind)> = actions
        .into_iter()
        .map(|(time, resource, tag, action)| {
            (
                time,
                EventKind::TagAction {
                    resource,
                    tag,
                    action,
                },
            )
        })
        .collect();
    kinds.extend(
        queries
            .into_iter()
            .map(|q| (q.arrival, EventKind::Query(q))),
    );
    let end = kinds.iter().map(|(t, _)| *t).max().unwrap_or(0);
    if with_ticks {
        kinds.extend(periodic_ticks(0, end, cfg));
    }
    let events: Vec<Event> = kinds
        .into_iter()
        .enumerate()
        .map(|(i, (time, kind))| Event {
            time,
            seq: i as u64,
            kind,
        })
        .collect();
    events
}

/// Update ticks run several times per staleness window so that staggered
/// refreshes still keep every key within the bound.
pub fn update_tick_period(cfg: &SystemConfig) -> Timestamp {
    (cfg.delta_update / 8).max(1)
}

/// Decay ticks every `delta_decay` and update ticks every
/// [`update_tick_period`] in `(start, end]`.
pub fn periodic_ticks(
    start: Timestamp,
    end: Timestamp,
    cfg: &SystemConfig,
) -> Vec<(Timestamp, EventKind)> {
    let mut out = Vec::new();
    let mut t = start + cfg.delta_decay;
    while t <= end {
        out.push((t, EventKind::DecayTick));
        t += cfg.delta_decay;
    }
    let p = update_tick_period(cfg);
    let mut t = start + p;
    while t <= end {
        out.push((t, EventKind::UpdateTick));
        t += p;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event {index}: {reason}")]
    MalformedEvent { index: usize, reason: String },
    #[error("cache incoherent after event {index}: {detail}")]
    Incoherent { index: usize, detail: String },
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Verify cache coherence after every event.
    pub check_coherence: bool,
    pub record_queries: bool,
    pub record_updates: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryRecord {
    pub time: Timestamp,
    pub terms: Vec<String>,
    pub result: ResourceSet,
    pub probes: u64,
    pub tr: u64,
    pub direct_hit: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UpdateRecord {
    pub time: Timestamp,
    pub key: TagKey,
    pub report: UpdateReport,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub queries: Vec<QueryRecord>,
    pub updates: Vec<UpdateRecord>,
    pub events: usize,
    pub coherence_checks: u64,
}

/// Whole simulated system: back-end index, gateways, placement and metrics.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub(crate) cfg: SystemConfig,
    pub index: Index,
    pub gateways: Vec<GatewayNode>,
    pub ledger: MetricsLedger,
    pub topology: Topology,
    pub(crate) rng: ChaCha8Rng,
    /// Full tag set of every resource seen so far.
    resources: BTreeMap<ResourceId, BTreeSet<String>>,
}

impl Cluster {
    pub fn new(cfg: SystemConfig) -> Result<Self, ConfigError> {
        let topology = Topology::new(cfg.n_gateways);
        Self::with_topology(cfg, topology)
    }

    pub fn with_topology(cfg: SystemConfig, topology: Topology) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Cluster {
            index: Index::new(cfg.ell),
            gateways: (0..cfg.n_gateways).map(GatewayNode::new).collect(),
            ledger: MetricsLedger::new(),
            topology,
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            resources: BTreeMap::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn resource_tags(&self) -> &BTreeMap<ResourceId, BTreeSet<String>> {
        &self.resources
    }

    pub fn reset_ledger(&mut self) {
        self.ledger = MetricsLedger::new();
    }

    /// Loads an initial corpus directly into the single-term lists without
    /// charging any traffic.
    pub fn bulk_load<I>(&mut self, corpus: I, ts: Timestamp)
    where
        I: IntoIterator<Item = (ResourceId, BTreeSet<String>)>,
    {
        for (r, tags) in corpus {
            let all = self.resources.entry(r).or_default();
            all.extend(tags);
            for t in derive_considered_tags(all, self.cfg.t_max) {
                self.index.apply_tag_action(&t, r, TagAction::Add, ts);
            }
        }
    }

    /// Resumes the given multi-term keys and clears the ledger afterwards.
    pub fn preresume<'a>(&mut self, keys: impl IntoIterator<Item = &'a TagKey>, now: Timestamp) {
        for k in keys {
            if !k.is_single() && k.len() <= self.cfg.effective_s_max() {
                self.resume_key(k, now).expect("multi-term key");
            }
        }
        self.reset_ledger();
    }

    /// A user adds or removes a tag. The resource's considered tags are
    /// recomputed and each change is sent to the affected single-term key.
    pub fn apply_resource_action(
        &mut self,
        r: ResourceId,
        tag: &str,
        action: TagAction,
        now: Timestamp,
    ) {
        let t_max = self.cfg.t_max;
        let tags = self.resources.entry(r).or_default();
        let before = derive_considered_tags(tags, t_max);
        let changed = match action {
            TagAction::Add => tags.insert(tag.to_string()),
            TagAction::Delete => tags.remove(tag),
        };
        if !changed {
            self.ledger.anomalies += 1;
            return;
        }
        let after = derive_considered_tags(tags, t_max);
        for t in after.difference(&before) {
            self.single_term_update(t, r, TagAction::Add, now);
        }
        for t in before.difference(&after) {
            self.single_term_update(t, r, TagAction::Delete, now);
        }
    }

    fn single_term_update(&mut self, term: &str, r: ResourceId, action: TagAction, now: Timestamp) {
        let cause = Cause::SingleTermUpdate;
        let key = TagKey::single(term);
        let from = self.topology.node_for_resource(r);
        let node = self.topology.node_for_key(&key);
        self.ledger.account_message(from, node, 1, cause);
        self.ledger.account_key_access(cause, false);
        self.ledger.account_local(node, 1, cause);
        let outcome = self.index.apply_tag_action(term, r, action, now);
        if outcome.changed_live() {
            self.propagate_single_term_update(&key, r, action == TagAction::Add);
        } else {
            self.ledger.anomalies += 1;
        }
    }

    fn status(&self, key: &TagKey) -> Option<KeyStatus> {
        let e = self.index.get(key)?;
        Some(match (e.state, e.cached) {
            (KeyState::Suspended, _) => KeyStatus::Suspended,
            (KeyState::Available, true) => KeyStatus::Cached,
            (KeyState::Available, false) => KeyStatus::Available,
        })
    }

    /// Resume/cache-insert decisions after a key was requested.
    pub(crate) fn after_request(&mut self, key: &TagKey, now: Timestamp) {
        let Some(status) = self.status(key) else {
            return;
        };
        let pv = self.index.get(key).unwrap().popularity;
        let a = classify(pv, &self.cfg, status);
        if a.resume && key.len() <= self.cfg.effective_s_max() {
            self.resume_key(key, now).expect("multi-term key");
        }
        if self.cfg.caching() && self.status(key) == Some(KeyStatus::Available) {
            let pv = self.index.get(key).unwrap().popularity;
            if classify(pv, &self.cfg, KeyStatus::Available).cache_insert {
                self.cache_insert(key).expect("available key");
            }
        }
    }

    /// Reports pending cache hits, decays every vector and acts on the
    /// resulting classifications.
    pub fn decay_tick(&mut self, now: Timestamp) {
        for g in 0..self.gateways.len() {
            let hits = self.gateways[g].take_pending_hits();
            for (key, n) in hits {
                let node = self.topology.node_for_key(&key);
                self.ledger.account_message(
                    NodeId::Gateway(g as u32),
                    node,
                    0,
                    Cause::CacheMaintenance,
                );
                if let Some(e) = self.index.get_mut(&key) {
                    for _ in 0..n {
                        e.popularity = e.popularity.record_request();
                    }
                }
            }
        }
        for (_, e) in self.index.entries_mut() {
            e.popularity = e.popularity.decay();
        }
        let keys: Vec<TagKey> = self.index.keys().map(|(k, _)| k.clone()).collect();
        for key in keys {
            let status = self.status(&key).unwrap();
            let pv = self.index.get(&key).unwrap().popularity;
            let a = classify(pv, &self.cfg, status);
            if a.none() {
                continue;
            }
            let multi = !key.is_single();
            if a.cache_evict || (a.suspend && multi) {
                self.cache_evict(&key);
            }
            if a.suspend && multi {
                self.index.suspend_key(&key).expect("multi-term key");
            }
            if a.cache_insert && self.cfg.caching() {
                self.cache_insert(&key).expect("available key");
            }
            if a.resume && key.len() <= self.cfg.effective_s_max() {
                self.resume_key(&key, now).expect("multi-term key");
                let pv = self.index.get(&key).unwrap().popularity;
                if self.cfg.caching() && classify(pv, &self.cfg, KeyStatus::Available).cache_insert
                {
                    self.cache_insert(&key).expect("available key");
                }
            }
        }
    }

    /// Age beyond which an available multi-term key is refreshed at an update
    /// tick. Keys are spread over four slots by hash so refreshes do not all
    /// fall on the same tick; every slot still refreshes before the age
    /// reaches `delta_update`.
    pub fn refresh_threshold(&self, key: &TagKey) -> Timestamp {
        let p = update_tick_period(&self.cfg);
        let slot = stable_hash(key.terms()) % 4;
        self.cfg.delta_update.saturating_sub(p * (1 + slot))
    }

    /// Refreshes due multi-term keys, then drops expired tombstones.
    pub fn update_tick(&mut self, now: Timestamp) -> Vec<(TagKey, UpdateReport)> {
        let due: Vec<TagKey> = self
            .index
            .keys()
            .filter(|(k, _)| !k.is_single())
            .filter_map(|(k, e)| e.list.as_ref().map(|l| (k, l.last_update_ts)))
            .filter(|(k, ts)| now.saturating_sub(*ts) > self.refresh_threshold(k))
            .map(|(k, _)| k.clone())
            .collect();
        let mut reports = Vec::with_capacity(due.len());
        for key in due {
            let rep = self
                .incremental_update(&key, now)
                .expect("available multi-term key");
            reports.push((key, rep));
        }
        self.index.gc_tombstones(now, self.cfg.delta_update);
        reports
    }

    /// Refreshes every available multi-term key regardless of age.
    pub fn update_all(&mut self, now: Timestamp) -> Vec<(TagKey, UpdateReport)> {
        let keys: Vec<TagKey> = self
            .index
            .keys()
            .filter(|(k, e)| !k.is_single() && e.is_available())
            .map(|(k, _)| k.clone())
            .collect();
        keys.into_iter()
            .map(|k| {
                let rep = self
                    .incremental_update(&k, now)
                    .expect("available multi-term key");
                (k, rep)
            })
            .collect()
    }

    fn validate_events(events: &[Event]) -> Result<(), SimError> {
        for (index, e) in events.iter().enumerate() {
            if let EventKind::TagAction { tag, .. } = &e.kind {
                if tag.is_empty() || tag.chars().any(char::is_whitespace) {
                    return Err(SimError::MalformedEvent {
                        index,
                        reason: format!("bad tag `{tag}`"),
                    });
                }
            }
            if let EventKind::Query(q) = &e.kind {
                if q.is_empty() {
                    return Err(SimError::MalformedEvent {
                        index,
                        reason: "empty query".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Processes `events` in (time, kind, sequence) order. The whole stream
    /// is validated before anything runs.
    pub fn run(&mut self, mut events: Vec<Event>, opts: RunOptions) -> Result<RunOutput, SimError> {
        Self::validate_events(&events)?;
        events.sort_by_key(Event::order_key);
        let mut out = RunOutput {
            events: events.len(),
            ..RunOutput::default()
        };
        for (index, e) in events.into_iter().enumerate() {
            match e.kind {
                EventKind::TagAction {
                    resource,
                    tag,
                    action,
                } => self.apply_resource_action(resource, &tag, action, e.time),
                EventKind::DecayTick => self.decay_tick(e.time),
                EventKind::UpdateTick => {
                    let reps = self.update_tick(e.time);
                    if opts.record_updates {
                        out.updates
                            .extend(reps.into_iter().map(|(key, report)| UpdateRecord {
                                time: e.time,
                                key,
                                report,
                            }));
                    }
                }
                EventKind::Query(q) => {
                    let o = self.handle_query_request(&q);
                    if opts.record_queries {
                        out.queries.push(QueryRecord {
                            time: e.time,
                            terms: q.terms().to_vec(),
                            result: o.result,
                            probes: o.probes,
                            tr: o.tr,
                            direct_hit: o.direct_hit,
                        });
                    }
                }
            }
            if opts.check_coherence {
                out.coherence_checks += 1;
                self.check_cache_coherence()
                    .map_err(|detail| SimError::Incoherent { index, detail })?;
            }
        }
        Ok(out)
    }
}
