//! Query log cleaning.
//!
//! Steps, applied in order to each query:
//! 1. remove stopwords;
//! 2. drop the query if its only term is a URL;
//! 3. remove terms without any alphanumeric character;
//! 4. remove terms longer than 30 characters;
//! 5. drop the query if the remaining text exceeds 100 characters;
//! 6. drop the query if no terms remain.
//!
//! Step 2 also looks ahead at the terms that steps 3 and 4 would keep, so a
//! query such as `www.example.com !!!` is treated as URL-only. This keeps
//! cleaning idempotent.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{parse_query_line, QueryLogRecord, QueryTrace};

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");
const TLDS: &str = include_str!("tlds.txt");

pub const MAX_TERM_CHARS: usize = 30;
pub const MAX_QUERY_CHARS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    /// One word per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn none() -> Self {
        Stopwords(BTreeSet::new())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::english()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CleanStats {
    pub lines_read: usize,
    pub unreadable: usize,
    pub step1_stopword_terms: usize,
    pub step2_url_queries: usize,
    pub step3_nonalnum_terms: usize,
    pub step4_long_terms: usize,
    pub step5_long_queries: usize,
    pub step6_empty_queries: usize,
    pub queries_out: usize,
}

fn is_tld(label: &str) -> bool {
    TLDS.lines().any(|t| t == label)
}

/// A scheme/`www.` prefix, or a dotted host name ending in a known TLD.
pub fn is_url(term: &str) -> bool {
    let t = term.to_lowercase();
    if t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.") {
        return true;
    }
    let host = t.split(['/', ':', '?', '#']).next().unwrap_or("");
    let labels: Vec<&str> = host.split('.').collect();
    labels.len() >= 2
        && labels
            .iter()
            .all(|l| !l.is_empty() && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'))
        && is_tld(labels[labels.len() - 1])
}

fn has_alnum(term: &str) -> bool {
    term.chars().any(char::is_alphanumeric)
}

fn too_long(term: &str) -> bool {
    term.chars().count() > MAX_TERM_CHARS
}

/// Cleans one query's terms, updating `st`. Returns `None` if dropped.
fn clean_terms(raw: &[String], stop: &Stopwords, st: &mut CleanStats) -> Option<Vec<String>> {
    let terms: Vec<String> = raw.iter().map(|t| t.to_lowercase()).collect();
    let before = terms.len();
    let terms: Vec<String> = terms.into_iter().filter(|t| !stop.contains(t)).collect();
    st.step1_stopword_terms += before - terms.len();

    let survivors: Vec<&String> = terms
        .iter()
        .filter(|t| has_alnum(t) && !too_long(t))
        .collect();
    let url_only = |ts: &[&String]| ts.len() == 1 && is_url(ts[0]);
    if url_only(&terms.iter().collect::<Vec<_>>()) || url_only(&survivors) {
        st.step2_url_queries += 1;
        return None;
    }

    let before = terms.len();
    let terms: Vec<String> = terms.into_iter().filter(|t| has_alnum(t)).collect();
    st.step3_nonalnum_terms += before - terms.len();

    let before = terms.len();
    let terms: Vec<String> = terms.into_iter().filter(|t| !too_long(t)).collect();
    st.step4_long_terms += before - terms.len();

    if terms.join(" ").chars().count() > MAX_QUERY_CHARS {
        st.step5_long_queries += 1;
        return None;
    }
    if terms.is_empty() {
        st.step6_empty_queries += 1;
        return None;
    }
    Some(terms)
}

/// Cleans raw query log lines (`<timestamp>\t<user>\t<terms>`). The output
/// is ordered by timestamp.
pub fn clean_query_log<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    stop: &Stopwords,
) -> (QueryTrace, CleanStats) {
    let mut st = CleanStats::default();
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        st.lines_read += 1;
        let Some(rec) = parse_query_line(line) else {
            st.unreadable += 1;
            continue;
        };
        if let Some(terms) = clean_terms(&rec.terms, stop, &mut st) {
            out.push(QueryLogRecord { terms, ..rec });
        }
    }
    out.sort_by_key(|r| r.ts);
    st.queries_out = out.len();
    (out, st)
}
