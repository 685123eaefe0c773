//! Domain types shared by every layer: keys, queries, resources, posting
//! lists and the system configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Logical simulation time (integer ticks, seconds by convention).
pub type Timestamp = u64;

/// Set of resources; ordered so that every traversal is deterministic.
pub type ResourceSet = BTreeSet<ResourceId>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceId(pub u32);

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("a key needs at least one term")]
    InvalidKey,
    #[error("key has {size} terms but s_max is {s_max}")]
    KeyTooLarge { size: usize, s_max: usize },
    #[error("empty term")]
    EmptyTerm,
}

/// Canonical term combination: sorted, deduplicated, non-empty.
///
/// The derived `Ord` is lexicographic over the term sequence, which is the
/// tie-break order used by the planner and the update chain.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagKey(Vec<String>);

impl TagKey {
    pub fn new<I, S>(terms: I, s_max: usize) -> Result<Self, KeyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = terms.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(KeyError::InvalidKey);
        }
        if set.iter().any(|t| t.is_empty()) {
            return Err(KeyError::EmptyTerm);
        }
        if set.len() > s_max {
            return Err(KeyError::KeyTooLarge {
                size: set.len(),
                s_max,
            });
        }
        Ok(TagKey(set.into_iter().collect()))
    }

    pub fn single(term: impl Into<String>) -> Self {
        TagKey(vec![term.into()])
    }

    /// Builds a key from terms already known to be sorted and unique.
    pub(crate) fn from_sorted(terms: Vec<String>) -> Self {
        debug_assert!(!terms.is_empty());
        debug_assert!(terms.windows(2).all(|w| w[0] < w[1]));
        TagKey(terms)
    }

    pub fn terms(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_single(&self) -> bool {
        self.0.len() == 1
    }

    /// Proper-subset test on the term sets.
    pub fn is_proper_subset_of(&self, other: &TagKey) -> bool {
        self.len() < other.len() && self.0.iter().all(|t| other.0.binary_search(t).is_ok())
    }

    /// The single-term keys this key is composed of, in lexicographic order.
    pub fn constituents(&self) -> impl Iterator<Item = TagKey> + '_ {
        self.0.iter().map(|t| TagKey::single(t.clone()))
    }
}

/// Free-function form of [`TagKey::new`].
pub fn canonicalize_key<I, S>(terms: I, s_max: usize) -> Result<TagKey, KeyError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    TagKey::new(terms, s_max)
}

impl fmt::Debug for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.join(","))
    }
}

impl fmt::Display for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// A conjunctive query: a non-empty set of terms and its arrival time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    terms: Vec<String>,
    pub arrival: Timestamp,
}

impl Query {
    pub fn new<I, S>(terms: I, arrival: Timestamp) -> Result<Self, KeyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = terms.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(KeyError::InvalidKey);
        }
        if set.iter().any(|t| t.is_empty()) {
            return Err(KeyError::EmptyTerm);
        }
        Ok(Query {
            terms: set.into_iter().collect(),
            arrival,
        })
    }

    /// Sorted, unique terms.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The key derived from the whole query, if it fits within `s_max`.
    pub fn as_key(&self, s_max: usize) -> Option<TagKey> {
        (self.terms.len() <= s_max).then(|| TagKey::from_sorted(self.terms.clone()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostingEntry {
    /// Time the resource was added, or marked deleted.
    pub ts: Timestamp,
    pub deleted: bool,
}

/// Timestamped posting list. Single-term lists keep tombstones until they
/// are garbage collected; multi-term lists never hold tombstones.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostingList {
    entries: BTreeMap<ResourceId, PostingEntry>,
    pub last_update_ts: Timestamp,
}

impl PostingList {
    pub fn new(last_update_ts: Timestamp) -> Self {
        PostingList {
            entries: BTreeMap::new(),
            last_update_ts,
        }
    }

    /// A tombstone-free list holding `live`, stamped at `ts`.
    pub fn from_live(live: &ResourceSet, ts: Timestamp) -> Self {
        PostingList {
            entries: live
                .iter()
                .map(|&r| (r, PostingEntry { ts, deleted: false }))
                .collect(),
            last_update_ts: ts,
        }
    }

    pub fn entries(&self) -> &BTreeMap<ResourceId, PostingEntry> {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut BTreeMap<ResourceId, PostingEntry> {
        &mut self.entries
    }

    pub fn get(&self, r: ResourceId) -> Option<&PostingEntry> {
        self.entries.get(&r)
    }

    pub fn live_size(&self) -> usize {
        self.entries.values().filter(|e| !e.deleted).count()
    }

    pub fn tombstones(&self) -> usize {
        self.entries.values().filter(|e| e.deleted).count()
    }

    pub fn is_live(&self, r: ResourceId) -> bool {
        matches!(self.entries.get(&r), Some(e) if !e.deleted)
    }

    pub fn live(&self) -> impl Iterator<Item = ResourceId> + '_ {
        self.entries
            .iter()
            .filter(|(_, e)| !e.deleted)
            .map(|(&r, _)| r)
    }

    pub fn live_set(&self) -> ResourceSet {
        self.live().collect()
    }
}

/// Whether the back end indexes multi-term keys or single-term keys only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Stk,
    Mtk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheScheme {
    None,
    Uniform,
    Dedicated,
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexMode::Stk => "stk",
            IndexMode::Mtk => "mtk",
        })
    }
}

impl fmt::Display for CacheScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheScheme::None => "none",
            CacheScheme::Uniform => "uniform",
            CacheScheme::Dedicated => "dedicated",
        })
    }
}

impl FromStr for IndexMode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stk" => Ok(IndexMode::Stk),
            "mtk" => Ok(IndexMode::Mtk),
            _ => Err(ConfigError::BadValue {
                key: "mode".into(),
                value: s.into(),
            }),
        }
    }
}

impl FromStr for CacheScheme {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CacheScheme::None),
            "uniform" => Ok(CacheScheme::Uniform),
            "dedicated" => Ok(CacheScheme::Dedicated),
            _ => Err(ConfigError::BadValue {
                key: "cache_scheme".into(),
                value: s.into(),
            }),
        }
    }
}

/// Largest supported popularity vector length (one machine word).
pub const MAX_ELL: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("constraint violated: {constraint} ({detail})")]
    Constraint {
        constraint: &'static str,
        detail: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
}

impl ConfigError {
    /// The violated constraint, if this is a threshold/range violation.
    pub fn constraint(&self) -> Option<&'static str> {
        match self {
            ConfigError::Constraint { constraint, .. } => Some(constraint),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub s_max: usize,
    pub t_max: usize,
    /// Popularity vector length.
    pub ell: u32,
    pub delta_decay: Timestamp,
    pub delta_update: Timestamp,
    pub b_res: u32,
    pub b_susp: u32,
    pub c_ins: u32,
    pub c_del: u32,
    pub n_gateways: u32,
    pub mode: IndexMode,
    pub cache_scheme: CacheScheme,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            s_max: 3,
            t_max: 20,
            ell: 24,
            delta_decay: 3600,
            delta_update: 3 * 3600,
            b_res: 4,
            b_susp: 0,
            c_ins: 12,
            c_del: 0,
            n_gateways: 5,
            mode: IndexMode::Mtk,
            cache_scheme: CacheScheme::None,
            rng_seed: 0,
        }
    }
}

fn violated(constraint: &'static str, detail: String) -> Result<(), ConfigError> {
    Err(ConfigError::Constraint { constraint, detail })
}

impl SystemConfig {
    /// Checks the threshold orderings and basic ranges, reporting the first
    /// violated constraint by name.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.s_max < 1 {
            return violated("s_max >= 1", format!("s_max={}", self.s_max));
        }
        if self.t_max < 1 {
            return violated("t_max >= 1", format!("t_max={}", self.t_max));
        }
        if self.ell < 1 || self.ell > MAX_ELL {
            return violated("1 <= ell <= 64", format!("ell={}", self.ell));
        }
        if self.delta_decay == 0 {
            return violated("delta_decay > 0", "delta_decay=0".into());
        }
        if self.delta_update == 0 {
            return violated("delta_update > 0", "delta_update=0".into());
        }
        if self.n_gateways < 1 {
            return violated("n_gateways >= 1", "n_gateways=0".into());
        }
        if self.b_susp >= self.b_res {
            return violated(
                "b_susp < b_res",
                format!("b_susp={}, b_res={}", self.b_susp, self.b_res),
            );
        }
        if self.b_res > self.c_ins {
            return violated(
                "b_res <= c_ins",
                format!("b_res={}, c_ins={}", self.b_res, self.c_ins),
            );
        }
        if self.c_ins > self.ell {
            return violated(
                "c_ins <= ell",
                format!("c_ins={}, ell={}", self.c_ins, self.ell),
            );
        }
        if self.c_del >= self.c_ins {
            return violated(
                "c_del < c_ins",
                format!("c_del={}, c_ins={}", self.c_del, self.c_ins),
            );
        }
        if self.c_del < self.b_susp {
            return violated(
                "c_del >= b_susp",
                format!("c_del={}, b_susp={}", self.c_del, self.b_susp),
            );
        }
        Ok(())
    }

    /// Largest key size the back end actually indexes: 1 in single-term mode.
    pub fn effective_s_max(&self) -> usize {
        match self.mode {
            IndexMode::Stk => 1,
            IndexMode::Mtk => self.s_max,
        }
    }

    pub fn caching(&self) -> bool {
        self.cache_scheme != CacheScheme::None
    }

    /// Sets one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
            })
        }
        match key {
            "s_max" => self.s_max = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "ell" => self.ell = num(key, value)?,
            "delta_decay" => self.delta_decay = num(key, value)?,
            "delta_update" => self.delta_update = num(key, value)?,
            "b_res" => self.b_res = num(key, value)?,
            "b_susp" => self.b_susp = num(key, value)?,
            "c_ins" => self.c_ins = num(key, value)?,
            "c_del" => self.c_del = num(key, value)?,
            "n_gateways" => self.n_gateways = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "cache_scheme" => self.cache_scheme = value.parse()?,
            "rng_seed" => self.rng_seed = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults. Does not
    /// validate; call [`SystemConfig::validate`] once overrides are applied.
    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SystemConfig::default();
        for (key, value) in crate::kv::parse(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }
}

/// Deterministic choice of the considered tags: the `t_max` lexicographically
/// smallest tags.
pub fn derive_considered_tags(tags: &BTreeSet<String>, t_max: usize) -> BTreeSet<String> {
    tags.iter().take(t_max).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub id: ResourceId,
    pub tags: BTreeSet<String>,
    pub considered_tags: BTreeSet<String>,
}

impl Resource {
    pub fn new(id: ResourceId, tags: BTreeSet<String>, t_max: usize) -> Self {
        let considered_tags = derive_considered_tags(&tags, t_max);
        Resource {
            id,
            tags,
            considered_tags,
        }
    }

    /// Whether the resource answers the conjunctive query `terms`.
    pub fn matches(&self, terms: &[String]) -> bool {
        terms.iter().all(|t| self.considered_tags.contains(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_key_sorts_and_dedups() {
        assert_eq!(TagKey::new(["b", "a"], 3).unwrap().terms(), ["a", "b"]);
        assert_eq!(TagKey::new(["a", "a"], 3).unwrap().terms(), ["a"]);
        assert_eq!(
            TagKey::new(Vec::<String>::new(), 3),
            Err(KeyError::InvalidKey)
        );
        assert_eq!(
            TagKey::new(["a", "b", "c"], 2),
            Err(KeyError::KeyTooLarge { size: 3, s_max: 2 })
        );
        let k = TagKey::new(["x", "y"], 2).unwrap();
        assert_eq!(TagKey::new(k.terms().to_vec(), 2).unwrap(), k);
    }

    #[test]
    fn subset_relation() {
        let ab = TagKey::new(["a", "b"], 3).unwrap();
        let abc = TagKey::new(["a", "b", "c"], 3).unwrap();
        assert!(ab.is_proper_subset_of(&abc));
        assert!(!abc.is_proper_subset_of(&ab));
        assert!(!ab.is_proper_subset_of(&ab));
        let ad = TagKey::new(["a", "d"], 3).unwrap();
        assert!(!ad.is_proper_subset_of(&abc));
    }

    #[test]
    fn considered_tags_take_smallest() {
        let few: BTreeSet<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(derive_considered_tags(&few, 20), few);

        let many: BTreeSet<String> = (0..25).map(|i| format!("tag{i:02}")).collect();
        let c = derive_considered_tags(&many, 20);
        assert_eq!(c.len(), 20);
        assert!(c.contains("tag00") && c.contains("tag19") && !c.contains("tag20"));
        assert_eq!(c, derive_considered_tags(&many, 20));
    }

    fn valid() -> SystemConfig {
        SystemConfig {
            ell: 8,
            b_susp: 1,
            b_res: 3,
            c_ins: 5,
            c_del: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn threshold_orderings() {
        assert!(valid().validate().is_ok());
        // boundary: b_res == c_ins, c_ins == ell, c_del == b_susp are legal
        let edge = SystemConfig {
            b_res: 5,
            c_ins: 5,
            ell: 5,
            c_del: 1,
            b_susp: 1,
            ..valid()
        };
        assert!(edge.validate().is_ok());

        let cases: [(SystemConfig, &str); 6] = [
            (
                SystemConfig {
                    b_susp: 3,
                    ..valid()
                },
                "b_susp < b_res",
            ),
            (
                SystemConfig {
                    b_susp: 4,
                    c_del: 4,
                    ..valid()
                },
                "b_susp < b_res",
            ),
            (
                SystemConfig {
                    b_res: 6,
                    ..valid()
                },
                "b_res <= c_ins",
            ),
            (
                SystemConfig {
                    c_ins: 9,
                    ..valid()
                },
                "c_ins <= ell",
            ),
            (
                SystemConfig {
                    c_del: 5,
                    ..valid()
                },
                "c_del < c_ins",
            ),
            (
                SystemConfig {
                    c_del: 0,
                    ..valid()
                },
                "c_del >= b_susp",
            ),
        ];
        for (cfg, name) in cases {
            assert_eq!(cfg.validate().unwrap_err().constraint(), Some(name));
        }
    }

    #[test]
    fn config_text_round() {
        let cfg =
            SystemConfig::from_kv_text("# comment\ns_max = 2\ncache_scheme = dedicated\n").unwrap();
        assert_eq!(cfg.s_max, 2);
        assert_eq!(cfg.cache_scheme, CacheScheme::Dedicated);
        assert_eq!(
            SystemConfig::from_kv_text("bogus = 1"),
            Err(ConfigError::UnknownKey("bogus".into()))
        );
    }

    #[test]
    fn posting_list_views() {
        let mut l = PostingList::new(0);
        l.entries_mut().insert(
            ResourceId(1),
            PostingEntry {
                ts: 1,
                deleted: false,
            },
        );
        l.entries_mut().insert(
            ResourceId(2),
            PostingEntry {
                ts: 2,
                deleted: true,
            },
        );
        l.entries_mut().insert(
            ResourceId(3),
            PostingEntry {
                ts: 3,
                deleted: false,
            },
        );
        assert_eq!(l.live_size(), 2);
        assert_eq!(l.tombstones(), 1);
        assert_eq!(
            l.live_set(),
            [ResourceId(1), ResourceId(3)].into_iter().collect()
        );
    }

    proptest! {
        #[test]
        fn key_equality_ignores_order(mut terms in proptest::collection::vec("[a-e]{1,3}", 1..6), seed in any::<u64>()) {
            let a = TagKey::new(terms.clone(), 8).unwrap();
            // cheap deterministic shuffle
            let n = terms.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_mul(i + 7) % n;
                terms.swap(i, j);
            }
            let b = TagKey::new(terms, 8).unwrap();
            prop_assert_eq!(&a, &b);
            use std::hash::{Hash, Hasher};
            let h = |k: &TagKey| { let mut s = std::collections::hash_map::DefaultHasher::new(); k.hash(&mut s); s.finish() };
            prop_assert_eq!(h(&a), h(&b));
        }
    }
}
