//! Workload ingestion and preparation: tag datasets, query logs, cleaning,
//! vocabulary matching, non-empty filtering and synthetic generation.

mod clean;
mod generator;

pub use clean::{clean_query_log, is_url, CleanStats, Stopwords};
pub use generator::{generate_synthetic, GeneratorConfig, GeneratorError, SyntheticWorkload};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::index::TagAction;
use crate::model::{derive_considered_tags, Query, ResourceId, ResourceSet, Timestamp};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryLogRecord {
    pub ts: Timestamp,
    pub user: String,
    pub terms: Vec<String>,
}

impl QueryLogRecord {
    pub fn to_query(&self) -> Option<Query> {
        Query::new(self.terms.iter().cloned(), self.ts).ok()
    }
}

pub type QueryTrace = Vec<QueryLogRecord>;

/// Parses `<timestamp>\t<user_id>\t<space-separated terms>` lines. Returns
/// the parsed records and the number of unreadable lines.
pub fn parse_query_log<'a>(lines: impl IntoIterator<Item = &'a str>) -> (QueryTrace, usize) {
    let mut out = Vec::new();
    let mut bad = 0;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        match parse_query_line(line) {
            Some(r) => out.push(r),
            None => bad += 1,
        }
    }
    (out, bad)
}

fn parse_query_line(line: &str) -> Option<QueryLogRecord> {
    let mut f = line.splitn(3, '\t');
    let ts = f.next()?.trim().parse().ok()?;
    let user = f.next()?.trim().to_string();
    let terms = f.next()?.split_whitespace().map(str::to_string).collect();
    Some(QueryLogRecord { ts, user, terms })
}

pub fn write_query_log(trace: &[QueryLogRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        let _ = writeln!(out, "{}\t{}\t{}", r.ts, r.user, r.terms.join(" "));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TagActionRecord {
    pub ts: Timestamp,
    pub action: TagAction,
    pub resource: ResourceId,
    pub tag: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub lines: usize,
    pub malformed: usize,
    /// Adds of a tag the resource already carries.
    pub duplicate_adds: usize,
    /// Deletes of a tag the resource does not carry.
    pub absent_deletes: usize,
}

/// A tag action trace with interned resource names and the tag sets after
/// replaying every action.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TagDataset {
    pub actions: Vec<TagActionRecord>,
    /// Resource names indexed by `ResourceId`.
    pub names: Vec<String>,
    pub resources: BTreeMap<ResourceId, BTreeSet<String>>,
    pub stats: DatasetStats,
}

impl TagDataset {
    /// Tag sets after replaying the actions with `ts <= until`.
    pub fn state_at(&self, until: Timestamp) -> BTreeMap<ResourceId, BTreeSet<String>> {
        let mut state: BTreeMap<ResourceId, BTreeSet<String>> = BTreeMap::new();
        for a in self.actions.iter().filter(|a| a.ts <= until) {
            let tags = state.entry(a.resource).or_default();
            match a.action {
                TagAction::Add => {
                    tags.insert(a.tag.clone());
                }
                TagAction::Delete => {
                    tags.remove(&a.tag);
                }
            }
        }
        state
    }

    /// Writes the actions back in the tag action file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.actions {
            let sign = match a.action {
                TagAction::Add => '+',
                TagAction::Delete => '-',
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                a.ts, sign, self.names[a.resource.0 as usize], a.tag
            );
        }
        out
    }
}

/// Parses `<timestamp>\t<+|->\t<resource_id>\t<tag>` lines. Malformed lines
/// are skipped and counted; actions that do not change the tag set are kept
/// and counted.
pub fn load_tag_dataset<'a>(lines: impl IntoIterator<Item = &'a str>) -> TagDataset {
    let mut ds = TagDataset::default();
    let mut ids: HashMap<String, ResourceId> = HashMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        ds.stats.lines += 1;
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        let parsed = match f.as_slice() {
            [ts, sign, res, tag]
                if !res.is_empty() && !tag.is_empty() && !tag.contains(char::is_whitespace) =>
            {
                let action = match *sign {
                    "+" => Some(TagAction::Add),
                    "-" => Some(TagAction::Delete),
                    _ => None,
                };
                ts.parse::<Timestamp>()
                    .ok()
                    .zip(action)
                    .map(|(ts, a)| (ts, a, *res, *tag))
            }
            _ => None,
        };
        let Some((ts, action, res, tag)) = parsed else {
            ds.stats.malformed += 1;
            continue;
        };
        let next = ResourceId(ids.len() as u32);
        let id = *ids.entry(res.to_string()).or_insert_with(|| {
            ds.names.push(res.to_string());
            next
        });
        let tags = ds.resources.entry(id).or_default();
        match action {
            TagAction::Add => {
                if !tags.insert(tag.to_string()) {
                    ds.stats.duplicate_adds += 1;
                }
            }
            TagAction::Delete => {
                if !tags.remove(tag) {
                    ds.stats.absent_deletes += 1;
                }
            }
        }
        ds.actions.push(TagActionRecord {
            ts,
            action,
            resource: id,
            tag: tag.to_string(),
        });
    }
    ds.actions.sort_by_key(|a| a.ts);
    ds
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VocabularyStats {
    pub distinct_terms_before: usize,
    pub distinct_terms_retained: usize,
    pub term_occurrences_before: usize,
    pub term_occurrences_retained: usize,
    pub queries_before: usize,
    pub queries_retained: usize,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        100.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl VocabularyStats {
    pub fn distinct_terms_pct(&self) -> f64 {
        pct(self.distinct_terms_retained, self.distinct_terms_before)
    }

    pub fn term_occurrences_pct(&self) -> f64 {
        pct(self.term_occurrences_retained, self.term_occurrences_before)
    }

    pub fn queries_pct(&self) -> f64 {
        pct(self.queries_retained, self.queries_before)
    }
}

/// Keeps only the query terms that occur as tags; queries left without terms
/// are dropped.
pub fn match_vocabulary(
    trace: &[QueryLogRecord],
    tags: &BTreeSet<String>,
) -> (QueryTrace, VocabularyStats) {
    let mut st = VocabularyStats {
        queries_before: trace.len(),
        ..VocabularyStats::default()
    };
    let mut distinct: BTreeSet<&str> = BTreeSet::new();
    let mut kept_distinct: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::new();
    for r in trace {
        st.term_occurrences_before += r.terms.len();
        let terms: Vec<String> = r
            .terms
            .iter()
            .filter(|t| {
                distinct.insert(t.as_str());
                tags.contains(t.as_str())
            })
            .cloned()
            .collect();
        st.term_occurrences_retained += terms.len();
        if terms.is_empty() {
            continue;
        }
        for t in &terms {
            kept_distinct.insert(tags.get(t.as_str()).unwrap());
        }
        out.push(QueryLogRecord {
            ts: r.ts,
            user: r.user.clone(),
            terms,
        });
    }
    st.distinct_terms_before = distinct.len();
    st.distinct_terms_retained = kept_distinct.len();
    st.queries_retained = out.len();
    (out, st)
}

/// Single-term inverted lists over the considered tags of a corpus.
pub fn build_term_lists(
    resources: &BTreeMap<ResourceId, BTreeSet<String>>,
    t_max: usize,
) -> HashMap<String, ResourceSet> {
    let mut lists: HashMap<String, ResourceSet> = HashMap::new();
    for (&r, tags) in resources {
        for t in derive_considered_tags(tags, t_max) {
            lists.entry(t).or_default().insert(r);
        }
    }
    lists
}

/// Exact answer of a conjunctive query against term lists.
pub fn evaluate(lists: &HashMap<String, ResourceSet>, terms: &[String]) -> ResourceSet {
    let mut sets: Vec<&ResourceSet> = Vec::with_capacity(terms.len());
    for t in terms {
        match lists.get(t) {
            Some(s) => sets.push(s),
            None => return ResourceSet::new(),
        }
    }
    sets.sort_by_key(|s| s.len());
    let Some((first, rest)) = sets.split_first() else {
        return ResourceSet::new();
    };
    first
        .iter()
        .filter(|r| rest.iter().all(|s| s.contains(r)))
        .copied()
        .collect()
}

/// Keeps the queries with at least one matching resource.
pub fn filter_nonempty(
    trace: &[QueryLogRecord],
    resources: &BTreeMap<ResourceId, BTreeSet<String>>,
    t_max: usize,
) -> QueryTrace {
    let lists = build_term_lists(resources, t_max);
    trace
        .iter()
        .filter(|r| !r.terms.is_empty() && !evaluate(&lists, &r.terms).is_empty())
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(terms: &[&str]) -> QueryLogRecord {
        QueryLogRecord {
            ts: 0,
            user: "u".into(),
            terms: terms.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn tagset(t: &[&str]) -> BTreeSet<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn query_log_round_trip() {
        let text = "5\tu1\tjazz music\nbad line\n7\tu2\tpizza\n";
        let (trace, bad) = parse_query_log(text.lines());
        assert_eq!(bad, 1);
        assert_eq!(trace.len(), 2);
        assert_eq!(write_query_log(&trace), "5\tu1\tjazz music\n7\tu2\tpizza\n");
    }

    #[test]
    fn dataset_loading() {
        let ds =
            load_tag_dataset("1\t+\turl1\tjazz\n2\t+\turl2\tmusic\n3\t+\turl1\tmusic\n".lines());
        assert_eq!(ds.actions.len(), 3);
        assert_eq!(ds.resources[&ResourceId(0)], tagset(&["jazz", "music"]));
        assert_eq!(ds.names, vec!["url1", "url2"]);

        let ds = load_tag_dataset("1\t+\turl1\n2\t+\turl1\tjazz\n".lines());
        assert_eq!(ds.stats.malformed, 1);
        assert_eq!(ds.actions.len(), 1);

        let ds = load_tag_dataset("1\t+\tu\tjazz\n2\t+\tu\tjazz\n3\t-\tu\trock\n".lines());
        assert_eq!(ds.stats.duplicate_adds, 1);
        assert_eq!(ds.stats.absent_deletes, 1);
        assert_eq!(ds.actions.len(), 3);
        assert_eq!(
            ds.to_text(),
            "1\t+\tu\tjazz\n2\t+\tu\tjazz\n3\t-\tu\trock\n"
        );
        assert_eq!(ds.state_at(1)[&ResourceId(0)], tagset(&["jazz"]));
    }

    #[test]
    fn vocabulary_matching() {
        let tags = tagset(&["music"]);
        let (out, st) = match_vocabulary(&[rec(&["jazz", "music"]), rec(&["qqq"])], &tags);
        assert_eq!(out, vec![rec(&["music"])]);
        assert_eq!(st.queries_retained, 1);
        assert_eq!(st.distinct_terms_before, 3);
        assert_eq!(st.distinct_terms_retained, 1);
        assert_eq!(st.term_occurrences_before, 3);

        let all = tagset(&["jazz", "music", "qqq"]);
        let trace = vec![rec(&["jazz", "music"]), rec(&["qqq"])];
        assert_eq!(match_vocabulary(&trace, &all).0, trace);
    }

    #[test]
    fn nonempty_filter() {
        let mut res = BTreeMap::new();
        res.insert(ResourceId(1), tagset(&["a", "b", "c"]));
        res.insert(ResourceId(2), tagset(&["z"]));
        let out = filter_nonempty(&[rec(&["a", "b"]), rec(&["a", "z"])], &res, 20);
        assert_eq!(out, vec![rec(&["a", "b"])]);
    }

    proptest! {
        #[test]
        fn filter_matches_scan(
            corpus in prop::collection::vec(prop::collection::btree_set(0u8..8, 0..5), 0..30),
            queries in prop::collection::vec(prop::collection::btree_set(0u8..8, 1..4), 0..30),
        ) {
            let res: BTreeMap<ResourceId, BTreeSet<String>> = corpus
                .iter()
                .enumerate()
                .map(|(i, s)| (ResourceId(i as u32), s.iter().map(|t| format!("t{t}")).collect()))
                .collect();
            let trace: Vec<QueryLogRecord> = queries
                .iter()
                .map(|q| QueryLogRecord { ts: 0, user: "u".into(), terms: q.iter().map(|t| format!("t{t}")).collect() })
                .collect();
            let got = filter_nonempty(&trace, &res, 20);
            let want: Vec<QueryLogRecord> = trace
                .iter()
                .filter(|q| res.values().any(|tags| q.terms.iter().all(|t| tags.contains(t))))
                .cloned()
                .collect();
            prop_assert_eq!(&got, &want);

            // queries with results only use tag vocabulary
            let universe: BTreeSet<String> = res.values().flatten().cloned().collect();
            let (matched, _) = match_vocabulary(&got, &universe);
            prop_assert_eq!(&matched, &got);
            prop_assert_eq!(filter_nonempty(&matched, &res, 20), got);
        }
    }
}
