//! Synthetic tagging corpus, tag action stream and query trace with
//! power-law shaped distributions.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::{QueryLogRecord, TagActionRecord, TagDataset};
use crate::index::TagAction;
use crate::model::{ResourceId, Timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("unknown generator key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorConfig {
    pub n_resources: usize,
    pub n_tags: usize,
    /// Zipf exponent of tag popularity by rank.
    pub tag_exponent: f64,
    /// Exponent of the tags-per-resource distribution `P(n) ∝ n^-γ`.
    pub tags_per_resource_exponent: f64,
    pub max_tags_per_resource: usize,
    pub n_queries: usize,
    /// Share of queries with 1, 2, 3, ... terms.
    pub term_count_shares: Vec<f64>,
    /// Per key size, exponent of the key frequency-count distribution
    /// (`#keys with frequency f ∝ f^-β`). The last entry covers larger sizes.
    pub query_beta: Vec<f64>,
    /// Per key size, relative number of distinct keys.
    pub query_alpha: Vec<f64>,
    /// Distinct single-term query keys; larger sizes scale by `query_alpha`.
    pub query_pool_base: usize,
    pub actions_per_minute: f64,
    pub delete_fraction: f64,
    pub duration_minutes: u64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_resources: 1000,
            n_tags: 500,
            tag_exponent: 1.0,
            tags_per_resource_exponent: 2.0,
            max_tags_per_resource: 20,
            n_queries: 1000,
            term_count_shares: vec![0.265, 0.35, 0.22, 0.10, 0.045, 0.02],
            query_beta: vec![1.8, 1.6, 1.9, 2.1],
            query_alpha: vec![8.3e5, 5.8e6, 1.2e7, 1.2e7],
            query_pool_base: 200,
            actions_per_minute: 150.0,
            delete_fraction: 0.0,
            duration_minutes: 60,
            seed: 0,
        }
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, GeneratorError> {
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| GeneratorError::BadValue {
            key: key.into(),
            value: value.into(),
        })
}

impl GeneratorConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), GeneratorError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, GeneratorError> {
            value.parse().map_err(|_| GeneratorError::BadValue {
                key: key.into(),
                value: value.into(),
            })
        }
        match key {
            "n_resources" => self.n_resources = num(key, value)?,
            "n_tags" => self.n_tags = num(key, value)?,
            "tag_exponent" => self.tag_exponent = num(key, value)?,
            "tags_per_resource_exponent" => self.tags_per_resource_exponent = num(key, value)?,
            "max_tags_per_resource" => self.max_tags_per_resource = num(key, value)?,
            "n_queries" => self.n_queries = num(key, value)?,
            "term_count_shares" => self.term_count_shares = parse_list(key, value)?,
            "query_beta" => self.query_beta = parse_list(key, value)?,
            "query_alpha" => self.query_alpha = parse_list(key, value)?,
            "query_pool_base" => self.query_pool_base = num(key, value)?,
            "actions_per_minute" => self.actions_per_minute = num(key, value)?,
            "delete_fraction" => self.delete_fraction = num(key, value)?,
            "duration_minutes" => self.duration_minutes = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(GeneratorError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Flat `key = value` text on top of the defaults; unknown keys are
    /// rejected.
    pub fn from_kv_text(text: &str) -> Result<Self, GeneratorError> {
        let mut cfg = GeneratorConfig::default();
        let pairs = crate::kv::parse(text).map_err(|e| match e {
            crate::model::ConfigError::Syntax(n) => GeneratorError::Syntax(n),
            other => GeneratorError::Infeasible(other.to_string()),
        })?;
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: &str| Err(GeneratorError::Infeasible(m.into()));
        let exps = [self.tag_exponent, self.tags_per_resource_exponent];
        if exps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return bad("exponents must be > 0");
        }
        if self.query_beta.is_empty()
            || self.query_beta.iter().any(|&b| !(b > 1.0 && b.is_finite()))
        {
            return bad("query_beta entries must be > 1");
        }
        if self.query_alpha.is_empty()
            || self
                .query_alpha
                .iter()
                .any(|&a| !(a > 0.0 && a.is_finite()))
        {
            return bad("query_alpha entries must be > 0");
        }
        if self.term_count_shares.is_empty()
            || self
                .term_count_shares
                .iter()
                .any(|&s| !(s >= 0.0 && s.is_finite()))
            || self.term_count_shares.iter().sum::<f64>() <= 0.0
        {
            return bad("term_count_shares must be non-negative with a positive sum");
        }
        if !(self.actions_per_minute >= 0.0 && self.actions_per_minute.is_finite()) {
            return bad("actions_per_minute must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.delete_fraction) {
            return bad("delete_fraction must be in [0, 1]");
        }
        if self.n_resources > 0 && self.n_tags == 0 {
            return bad("resources need at least one distinct tag");
        }
        if self.max_tags_per_resource == 0 {
            return bad("max_tags_per_resource must be >= 1");
        }
        if self.max_tags_per_resource > self.n_tags.max(1) {
            return bad("max_tags_per_resource exceeds n_tags");
        }
        if self.query_pool_base == 0 && self.n_queries > 0 {
            return bad("query_pool_base must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SyntheticWorkload {
    /// Initial corpus (loaded at time 0).
    pub resources: BTreeMap<ResourceId, BTreeSet<String>>,
    /// Tag actions after time 0.
    pub actions: Vec<TagActionRecord>,
    pub queries: Vec<QueryLogRecord>,
}

impl SyntheticWorkload {
    pub fn resource_name(r: ResourceId) -> String {
        format!("r{}", r.0)
    }

    /// Initial corpus as additions at time 0 followed by the action stream.
    pub fn to_dataset(&self) -> TagDataset {
        let mut ds = TagDataset {
            names: (0..self.resources.len() as u32)
                .map(|i| Self::resource_name(ResourceId(i)))
                .collect(),
            resources: self.resources.clone(),
            ..TagDataset::default()
        };
        for (&r, tags) in &self.resources {
            for t in tags {
                ds.actions.push(TagActionRecord {
                    ts: 0,
                    action: TagAction::Add,
                    resource: r,
                    tag: t.clone(),
                });
            }
        }
        ds.actions.extend(self.actions.iter().cloned());
        ds
    }
}

pub fn tag_name(rank: usize) -> String {
    format!("tag{rank}")
}

fn power_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|i| (i as f64).powf(-exponent)).collect()
}

/// Draws `k` distinct tag ranks with Zipf weights (rejecting repeats).
fn draw_tags(
    k: usize,
    zipf: &WeightedIndex<f64>,
    n_tags: usize,
    rng: &mut ChaCha8Rng,
) -> BTreeSet<String> {
    let mut ranks = BTreeSet::new();
    let mut attempts = 0;
    while ranks.len() < k {
        attempts += 1;
        let r = if attempts > 50 * k {
            rng.gen_range(0..n_tags)
        } else {
            zipf.sample(rng)
        };
        ranks.insert(r);
    }
    ranks.into_iter().map(|r| tag_name(r + 1)).collect()
}

pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<SyntheticWorkload, GeneratorError> {
    cfg.validate()?;
    let mut out = SyntheticWorkload::default();
    if cfg.n_resources == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf =
        WeightedIndex::new(power_weights(cfg.n_tags, cfg.tag_exponent)).expect("positive weights");
    let per_res = WeightedIndex::new(power_weights(
        cfg.max_tags_per_resource,
        cfg.tags_per_resource_exponent,
    ))
    .expect("positive weights");

    for i in 0..cfg.n_resources {
        let k = per_res.sample(&mut rng) + 1;
        out.resources.insert(
            ResourceId(i as u32),
            draw_tags(k, &zipf, cfg.n_tags, &mut rng),
        );
    }
    let initial = out.resources.clone();

    // action stream over the run duration
    let seconds = cfg.duration_minutes * 60;
    let n_actions = (cfg.actions_per_minute * cfg.duration_minutes as f64).round() as u64;
    let mut state = out.resources.clone();
    for i in 0..n_actions {
        let ts = 1 + i * seconds / n_actions.max(1);
        let r = ResourceId(rng.gen_range(0..cfg.n_resources) as u32);
        let tags = state.get_mut(&r).unwrap();
        let delete = rng.gen_bool(cfg.delete_fraction) && !tags.is_empty();
        if delete {
            let t = tags
                .iter()
                .nth(rng.gen_range(0..tags.len()))
                .unwrap()
                .clone();
            tags.remove(&t);
            out.actions.push(TagActionRecord {
                ts,
                action: TagAction::Delete,
                resource: r,
                tag: t,
            });
        } else if tags.len() < cfg.n_tags {
            let mut t = tag_name(zipf.sample(&mut rng) + 1);
            let mut tries = 0;
            while tags.contains(&t) {
                tries += 1;
                t = if tries > 50 {
                    tag_name(rng.gen_range(0..cfg.n_tags) + 1)
                } else {
                    tag_name(zipf.sample(&mut rng) + 1)
                };
            }
            tags.insert(t.clone());
            out.actions.push(TagActionRecord {
                ts,
                action: TagAction::Add,
                resource: r,
                tag: t,
            });
        }
    }

    // per-size pools of query keys drawn from tag subsets of the corpus
    let max_terms = cfg.term_count_shares.len();
    let base_alpha = cfg.query_alpha[0];
    let mut pools: Vec<Vec<Vec<String>>> = Vec::with_capacity(max_terms);
    let by_size: Vec<(ResourceId, Vec<String>)> = initial
        .iter()
        .map(|(&r, t)| (r, t.iter().cloned().collect()))
        .collect();
    for size in 1..=max_terms {
        let alpha = cfg.query_alpha[(size - 1).min(cfg.query_alpha.len() - 1)];
        let target = ((cfg.query_pool_base as f64) * alpha / base_alpha)
            .round()
            .max(1.0) as usize;
        let eligible: Vec<&(ResourceId, Vec<String>)> =
            by_size.iter().filter(|(_, t)| t.len() >= size).collect();
        let mut pool: BTreeSet<Vec<String>> = BTreeSet::new();
        let mut order: Vec<Vec<String>> = Vec::new();
        if !eligible.is_empty() {
            let mut attempts = 0;
            while pool.len() < target && attempts < target * 20 {
                attempts += 1;
                let (_, tags) = eligible[rng.gen_range(0..eligible.len())];
                let mut pick: Vec<String> = tags.choose_multiple(&mut rng, size).cloned().collect();
                pick.sort();
                if pool.insert(pick.clone()) {
                    order.push(pick);
                }
            }
        }
        pools.push(order);
    }

    let shares = WeightedIndex::new(&cfg.term_count_shares).expect("validated shares");
    let samplers: Vec<Option<WeightedIndex<f64>>> = pools
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.is_empty() {
                return None;
            }
            let beta = cfg.query_beta[i.min(cfg.query_beta.len() - 1)];
            Some(
                WeightedIndex::new(power_weights(p.len(), 1.0 / (beta - 1.0)))
                    .expect("positive weights"),
            )
        })
        .collect();
    for i in 0..cfg.n_queries {
        let ts: Timestamp = 1 + (i as u64) * seconds / (cfg.n_queries as u64).max(1);
        let mut size = shares.sample(&mut rng);
        while samplers[size].is_none() {
            size -= 1;
        }
        let rank = samplers[size].as_ref().unwrap().sample(&mut rng);
        out.queries.push(QueryLogRecord {
            ts,
            user: format!("u{}", rng.gen_range(0..1000u32)),
            terms: pools[size][rank].clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_resources: 300,
            n_tags: 100,
            n_queries: 200,
            duration_minutes: 2,
            delete_fraction: 0.2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn empty_corpus() {
        let w = generate_synthetic(&GeneratorConfig {
            n_resources: 0,
            ..GeneratorConfig::default()
        })
        .unwrap();
        assert!(w.resources.is_empty() && w.actions.is_empty() && w.queries.is_empty());
    }

    #[test]
    fn reproducible() {
        assert_eq!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&small()).unwrap()
        );
        let other = generate_synthetic(&GeneratorConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(generate_synthetic(&small()).unwrap(), other);
    }

    #[test]
    fn shapes() {
        let w = generate_synthetic(&small()).unwrap();
        assert_eq!(w.resources.len(), 300);
        assert!(w.resources.values().all(|t| (1..=20).contains(&t.len())));
        assert_eq!(w.actions.len(), 300);
        assert!(w.actions.windows(2).all(|p| p[0].ts <= p[1].ts));
        assert!(w.actions.iter().any(|a| a.action == TagAction::Delete));
        assert_eq!(w.queries.len(), 200);
        // every query comes from some resource's initial tags
        for q in &w.queries {
            assert!(w
                .resources
                .values()
                .any(|t| q.terms.iter().all(|x| t.contains(x))));
        }
        let ds = w.to_dataset();
        assert_eq!(ds.state_at(0), w.resources);
    }

    #[test]
    fn config_text() {
        let cfg = GeneratorConfig::from_kv_text("n_resources = 5\nquery_beta = 1.5, 2\n").unwrap();
        assert_eq!(cfg.n_resources, 5);
        assert_eq!(cfg.query_beta, vec![1.5, 2.0]);
        assert!(matches!(
            GeneratorConfig::from_kv_text("nope = 1"),
            Err(GeneratorError::UnknownKey(_))
        ));
        let bad = GeneratorConfig {
            n_tags: 3,
            max_tags_per_resource: 4,
            ..GeneratorConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&bad),
            Err(GeneratorError::Infeasible(_))
        ));
    }
}
