//! Query planning: subset-key enumeration and the greedy key access order.

mod exec;

pub use exec::QueryOutcome;

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::model::TagKey;

/// A key whose size has been probed and that can be read (from the index or
/// from the gateway cache).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AvailableKey {
    pub key: TagKey,
    pub size: usize,
    pub cached: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanStep {
    pub key: TagKey,
    pub use_cache: bool,
    pub probed_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KeyAccessPlan {
    pub steps: Vec<PlanStep>,
}

impl KeyAccessPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &TagKey> {
        self.steps.iter().map(|s| &s.key)
    }
}

/// All non-empty subsets of the (sorted, unique) query terms with at most
/// `s_max` terms, ordered by size and then lexicographically.
pub fn compute_subset_keys(terms: &[String], s_max: usize) -> Vec<TagKey> {
    let n = terms.len();
    let mut out = Vec::new();
    for size in 1..=s_max.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(TagKey::from_sorted(
                idx.iter().map(|&i| terms[i].clone()).collect(),
            ));
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && idx[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

fn pick<'a, R: Rng + ?Sized>(mut c: Vec<&'a AvailableKey>, rng: &mut R) -> &'a AvailableKey {
    if c.len() == 1 {
        c.pop().unwrap()
    } else {
        c[rng.gen_range(0..c.len())]
    }
}

/// Orders the available keys for a chain that intersects their lists.
///
/// Keys contained in another available key are dropped. The chain starts at
/// the smallest list and then repeatedly takes the key adding the most
/// uncovered terms, preferring small lists and then cached ones; remaining
/// ties are broken with `rng`. A cached key whose neighbours both come from
/// the index is read from the index instead, saving the detour through the
/// gateway.
pub fn compute_key_access_list<'a, R: Rng + ?Sized>(
    terms: &'a [String],
    avail: &'a [AvailableKey],
    rng: &mut R,
) -> KeyAccessPlan {
    let mut cands: Vec<&AvailableKey> = avail
        .iter()
        .filter(|k| !avail.iter().any(|o| k.key.is_proper_subset_of(&o.key)))
        .collect();
    cands.sort_by(|a, b| a.key.cmp(&b.key));
    cands.dedup_by(|a, b| a.key == b.key);

    let mut plan = KeyAccessPlan::default();
    let Some(first) = cands
        .iter()
        .copied()
        .min_by(|a, b| (a.size, &a.key).cmp(&(b.size, &b.key)))
    else {
        return plan;
    };
    let wanted: BTreeSet<&'a str> = terms.iter().map(String::as_str).collect();
    let mut covered: BTreeSet<&'a str> = BTreeSet::new();
    let take = |k: &'a AvailableKey, covered: &mut BTreeSet<&'a str>, plan: &mut KeyAccessPlan| {
        covered.extend(
            k.key
                .terms()
                .iter()
                .map(String::as_str)
                .filter(|t| wanted.contains(t)),
        );
        plan.steps.push(PlanStep {
            key: k.key.clone(),
            use_cache: k.cached,
            probed_size: k.size,
        });
    };
    take(first, &mut covered, &mut plan);
    cands.retain(|k| k.key != first.key);

    while covered.len() < wanted.len() {
        let gain = |k: &AvailableKey| {
            k.key
                .terms()
                .iter()
                .filter(|t| wanted.contains(t.as_str()) && !covered.contains(t.as_str()))
                .count()
        };
        let best = cands.iter().map(|k| gain(k)).max().unwrap_or(0);
        if best == 0 {
            break;
        }
        let tier: Vec<&AvailableKey> = cands.iter().copied().filter(|k| gain(k) == best).collect();
        let min_size = tier.iter().map(|k| k.size).min().unwrap();
        let tier: Vec<&AvailableKey> = tier.into_iter().filter(|k| k.size == min_size).collect();
        let cached: Vec<&AvailableKey> = tier.iter().copied().filter(|k| k.cached).collect();
        let chosen = if cached.is_empty() {
            pick(tier, rng)
        } else {
            pick(cached, rng)
        };
        take(chosen, &mut covered, &mut plan);
        cands.retain(|k| k.key != chosen.key);
    }

    let n = plan.steps.len();
    for i in 1..n.saturating_sub(1) {
        if !plan.steps[i - 1].use_cache && !plan.steps[i + 1].use_cache {
            plan.steps[i].use_cache = false;
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_integer::binomial;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn terms(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    fn k(t: &[&str]) -> TagKey {
        TagKey::new(t.iter().copied(), 8).unwrap()
    }

    fn ak(t: &[&str], size: usize, cached: bool) -> AvailableKey {
        AvailableKey {
            key: k(t),
            size,
            cached,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn subset_keys() {
        let got = compute_subset_keys(&terms(&["a", "b", "c"]), 2);
        let want = vec![
            k(&["a"]),
            k(&["b"]),
            k(&["c"]),
            k(&["a", "b"]),
            k(&["a", "c"]),
            k(&["b", "c"]),
        ];
        assert_eq!(got, want);
        assert_eq!(compute_subset_keys(&terms(&["a"]), 5), vec![k(&["a"])]);
        assert_eq!(
            compute_subset_keys(&terms(&["a", "b", "c", "d"]), 3).len(),
            14
        );
    }

    #[test]
    fn subset_count_matches_binomials() {
        let t = terms(&["a", "b", "c", "d", "e", "f"]);
        for s_max in 1..=6 {
            let n: usize = (1..=s_max).map(|i| binomial(6, i)).sum();
            let keys = compute_subset_keys(&t, s_max);
            assert_eq!(keys.len(), n);
            let distinct: BTreeSet<_> = keys.iter().collect();
            assert_eq!(distinct.len(), n);
        }
    }

    #[test]
    fn hand_traced_plan() {
        let avail = vec![
            ak(&["a"], 3, false),
            ak(&["b"], 2, false),
            ak(&["c"], 1, false),
            ak(&["a", "b"], 2, false),
        ];
        let plan = compute_key_access_list(&terms(&["a", "b", "c"]), &avail, &mut rng());
        assert_eq!(
            plan.keys().cloned().collect::<Vec<_>>(),
            vec![k(&["c"]), k(&["a", "b"])]
        );
    }

    #[test]
    fn uncovered_term_gets_a_single_key() {
        let avail = vec![
            ak(&["t1"], 50, false),
            ak(&["t2"], 40, false),
            ak(&["t3"], 30, false),
            ak(&["t4"], 20, false),
            ak(&["t1", "t2"], 5, false),
            ak(&["t1", "t4"], 7, false),
        ];
        let plan = compute_key_access_list(&terms(&["t1", "t2", "t3", "t4"]), &avail, &mut rng());
        let keys: Vec<TagKey> = plan.keys().cloned().collect();
        assert_eq!(keys, vec![k(&["t1", "t2"]), k(&["t1", "t4"]), k(&["t3"])]);
    }

    #[test]
    fn redundant_subset_key_removed() {
        let avail = vec![
            ak(&["t1", "t4"], 1, false),
            ak(&["t1", "t3", "t4"], 9, false),
            ak(&["t3"], 9, false),
        ];
        let plan = compute_key_access_list(&terms(&["t1", "t3", "t4"]), &avail, &mut rng());
        assert_eq!(
            plan.keys().cloned().collect::<Vec<_>>(),
            vec![k(&["t1", "t3", "t4"])]
        );
    }

    #[test]
    fn cached_preferred_on_ties_and_unset_between_uncached() {
        let avail = vec![
            ak(&["a"], 1, false),
            ak(&["b"], 5, false),
            ak(&["c"], 5, true),
            ak(&["d"], 9, false),
        ];
        let plan = compute_key_access_list(&terms(&["a", "b", "c", "d"]), &avail, &mut rng());
        let keys: Vec<TagKey> = plan.keys().cloned().collect();
        assert_eq!(keys[..2], [k(&["a"]), k(&["c"])]);
        // c sits between two uncached keys
        assert!(!plan.steps[1].use_cache);

        let avail = vec![
            ak(&["a"], 1, true),
            ak(&["b"], 5, true),
            ak(&["c"], 9, false),
        ];
        let plan = compute_key_access_list(&terms(&["a", "b", "c"]), &avail, &mut rng());
        assert!(plan.steps[0].use_cache && plan.steps[1].use_cache);
    }

    fn arb_avail() -> impl Strategy<Value = (Vec<String>, Vec<AvailableKey>)> {
        (1usize..6).prop_flat_map(|n| {
            let t: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let keys = compute_subset_keys(&t, 3);
            let m = keys.len();
            (
                Just(t),
                Just(keys),
                prop::collection::vec(any::<bool>(), m),
                prop::collection::vec(0usize..20, m),
                prop::collection::vec(any::<bool>(), m),
            )
                .prop_map(|(t, keys, present, sizes, cached)| {
                    let avail = keys
                        .into_iter()
                        .enumerate()
                        .filter(|(i, k)| k.is_single() || present[*i])
                        .map(|(i, key)| AvailableKey {
                            key,
                            size: sizes[i],
                            cached: cached[i],
                        })
                        .collect();
                    (t, avail)
                })
        })
    }

    proptest! {
        #[test]
        fn plan_invariants((t, avail) in arb_avail(), seed in any::<u64>()) {
            let plan = compute_key_access_list(&t, &avail, &mut ChaCha8Rng::seed_from_u64(seed));
            let covered: BTreeSet<&String> = plan.keys().flat_map(|k| k.terms()).collect();
            prop_assert_eq!(covered.len(), t.len());
            for a in plan.keys() {
                for b in plan.keys() {
                    prop_assert!(!a.is_proper_subset_of(b));
                }
            }
            let non_redundant_min = avail
                .iter()
                .filter(|k| !avail.iter().any(|o| k.key.is_proper_subset_of(&o.key)))
                .map(|k| k.size)
                .min()
                .unwrap();
            prop_assert_eq!(plan.steps[0].probed_size, non_redundant_min);
            let again = compute_key_access_list(&t, &avail, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(plan, again);
        }
    }
}
