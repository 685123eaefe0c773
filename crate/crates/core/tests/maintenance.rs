use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use mtkindex::analysis::tr_bound_check;
use mtkindex::index::TagAction;
use mtkindex::simnet::{build_events, Cause, RunOptions};
use mtkindex::{CacheScheme, Cluster, Query, ResourceId, ResourceSet, SystemConfig, TagKey};

type Corpus = BTreeMap<ResourceId, BTreeSet<String>>;

const WORDS: [&str; 5] = ["a", "b", "c", "d", "e"];

fn truth(corpus: &Corpus, key: &TagKey) -> ResourceSet {
    corpus
        .iter()
        .filter(|(_, tags)| key.terms().iter().all(|t| tags.contains(t)))
        .map(|(&r, _)| r)
        .collect()
}

fn apply(corpus: &mut Corpus, r: ResourceId, tag: &str, action: TagAction) {
    let tags = corpus.entry(r).or_default();
    match action {
        TagAction::Add => tags.insert(tag.to_string()),
        TagAction::Delete => tags.remove(tag),
    };
}

fn arb_corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(prop::collection::btree_set(0usize..5, 0..5), 1..30).prop_map(|sets| {
        sets.into_iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    ResourceId(i as u32),
                    s.into_iter().map(|w| WORDS[w].to_string()).collect(),
                )
            })
            .collect()
    })
}

/// (time step, resource, word, add?)
fn arb_actions() -> impl Strategy<Value = Vec<(u64, u32, usize, bool)>> {
    prop::collection::vec((1u64..4, 0u32..35, 0usize..5, any::<bool>()), 0..60)
}

fn arb_key() -> impl Strategy<Value = TagKey> {
    prop::sample::subsequence(WORDS.to_vec(), 2..=4).prop_map(|w| TagKey::new(w, 4).unwrap())
}

fn cfg() -> SystemConfig {
    SystemConfig {
        s_max: 4,
        ..SystemConfig::default()
    }
}

proptest! {
    #[test]
    fn incremental_update_matches_brute_force(
        corpus in arb_corpus(),
        key in arb_key(),
        actions in arb_actions(),
    ) {
        let mut c = Cluster::new(cfg()).unwrap();
        c.bulk_load(corpus.clone(), 0);
        c.resume_key(&key, 0).unwrap();
        let mut live = corpus;
        let mut now = 0;
        for (dt, r, w, add) in actions {
            now += dt;
            let action = if add { TagAction::Add } else { TagAction::Delete };
            c.apply_resource_action(ResourceId(r), WORDS[w], action, now);
            apply(&mut live, ResourceId(r), WORDS[w], action);
        }
        let rep = c.incremental_update(&key, now + 1).unwrap();
        let list = c.index.get(&key).unwrap().list.as_ref().unwrap().live_set();
        prop_assert_eq!(list, truth(&live, &key));
        prop_assert!(tr_bound_check(key.len() as u64, rep.r_max as u64, rep.tr).within_published);
    }

    #[test]
    fn resume_and_update_agree(
        corpus in arb_corpus(),
        key in arb_key(),
        actions in arb_actions(),
    ) {
        let mut updated = Cluster::new(cfg()).unwrap();
        updated.bulk_load(corpus.clone(), 0);
        updated.resume_key(&key, 0).unwrap();
        let mut now = 0;
        for (dt, r, w, add) in &actions {
            now += dt;
            let action = if *add { TagAction::Add } else { TagAction::Delete };
            updated.apply_resource_action(ResourceId(*r), WORDS[*w], action, now);
        }
        updated.incremental_update(&key, now + 1).unwrap();
        let mut fresh = updated.clone();
        fresh.index.suspend_key(&key).unwrap();
        fresh.resume_key(&key, now + 1).unwrap();
        let a = updated.index.get(&key).unwrap().list.as_ref().unwrap().live_set();
        let b = fresh.index.get(&key).unwrap().list.as_ref().unwrap().live_set();
        prop_assert_eq!(a, b);
    }
}

/// Tombstone collection at update ticks never drops a deletion that a later
/// incremental update still needs, and no tombstone outlives the window.
#[test]
fn gc_interleaved_with_updates() {
    let cfg = SystemConfig {
        s_max: 3,
        delta_update: 40,
        ..SystemConfig::default()
    };
    let keys: Vec<TagKey> = [["a", "b"], ["a", "c"], ["b", "d"], ["c", "e"]]
        .iter()
        .map(|k| TagKey::new(k.iter().copied(), 3).unwrap())
        .chain([TagKey::new(["a", "b", "c"], 3).unwrap()])
        .collect();
    for seed in 0..40u64 {
        let mut c = Cluster::new(SystemConfig {
            rng_seed: seed,
            ..cfg.clone()
        })
        .unwrap();
        let mut live = Corpus::new();
        c.preresume(&keys, 0);
        let mut x = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = || {
            x = x
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (x >> 33) as usize
        };
        let period = mtkindex::simnet::update_tick_period(&cfg);
        for t in 1..=400u64 {
            for _ in 0..next() % 3 {
                let r = ResourceId((next() % 20) as u32);
                let w = WORDS[next() % 5];
                let action = if next() % 2 == 0 {
                    TagAction::Add
                } else {
                    TagAction::Delete
                };
                c.apply_resource_action(r, w, action, t);
                apply(&mut live, r, w, action);
            }
            if t % period == 0 {
                c.update_tick(t);
                for (k, e) in c.index.keys() {
                    if let Some(l) = &e.list {
                        if k.is_single() {
                            assert!(l
                                .entries()
                                .values()
                                .all(|p| !p.deleted || t - p.ts < cfg.delta_update));
                        } else {
                            assert!(
                                t - l.last_update_ts < cfg.delta_update,
                                "{k:?} too old at {t}"
                            );
                        }
                    }
                }
            }
            if t % 37 == 0 {
                let mut probe = c.clone();
                probe.update_all(t);
                for k in &keys {
                    let got = probe
                        .index
                        .get(k)
                        .unwrap()
                        .list
                        .as_ref()
                        .unwrap()
                        .live_set();
                    assert_eq!(got, truth(&live, k), "seed {seed}, {k:?} at {t}");
                }
            }
        }
    }
}

#[test]
fn ledger_invariants_over_a_mixed_run() {
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    for scheme in [
        CacheScheme::None,
        CacheScheme::Uniform,
        CacheScheme::Dedicated,
    ] {
        let cfg = SystemConfig {
            cache_scheme: scheme,
            ell: 6,
            b_res: 1,
            c_ins: 2,
            delta_decay: 50,
            delta_update: 80,
            ..SystemConfig::default()
        };
        let mut actions = Vec::new();
        let mut queries = Vec::new();
        for i in 0..3000u64 {
            let w = |k: u64| words[((i * 7 + k * 13) % 12) as usize].clone();
            if i % 3 == 0 {
                let action = if i % 5 == 0 {
                    TagAction::Delete
                } else {
                    TagAction::Add
                };
                actions.push((i, ResourceId((i % 40) as u32), w(0), action));
            } else {
                let n = 1 + i % 4;
                queries.push(Query::new((0..n).map(|k| w(k % 3 + (i % 2))), i).unwrap());
            }
        }
        let run = || {
            let mut c = Cluster::new(cfg.clone()).unwrap();
            let events = build_events(actions.clone(), queries.clone(), &cfg, true);
            c.run(
                events,
                RunOptions {
                    check_coherence: true,
                    ..RunOptions::default()
                },
            )
            .unwrap();
            c.ledger
        };
        let l = run();
        assert_eq!(l, run(), "{scheme}: runs differ");
        assert!(l.total.ik <= l.total.ck);
        assert!(l.total.probes <= l.total.ck);
        assert!(l.total.hr_gateway + l.total.hr_backend >= 2 * l.total.tr);
        let by_cause: u64 = Cause::ALL.iter().map(|&c| l.cause(c).tr).sum();
        assert_eq!(by_cause, l.total.tr);
        let per_node: u64 = l.hr_by_node.values().sum();
        assert_eq!(per_node, l.total.hr_gateway + l.total.hr_backend);
        assert_eq!(l.queries, queries.len() as u64);
    }
}
