//! Offline analytics over corpora, index snapshots and run results.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_integer::binomial;
use serde::Serialize;
use thiserror::Error;

use crate::index::{KeyState, SnapshotRecord};
use crate::model::{derive_considered_tags, ResourceSet};

/// Average bytes per posting entry (a URL of typical length).
pub const DEFAULT_ENTRY_BYTES: u64 = 73;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("need at least 3 positive points, got {0}")]
    InsufficientData(usize),
    #[error("result sets differ at query {0}")]
    QueryMismatch(usize),
}

/// Posting entries a full multi-term index needs: for each resource, one
/// entry per non-empty subset of its considered tags with at most `s_max`
/// terms.
pub fn count_list_entries<'a, I>(tag_sets: I, s_max: usize, t_max: usize) -> u64
where
    I: IntoIterator<Item = &'a BTreeSet<String>>,
{
    tag_sets
        .into_iter()
        .map(|tags| {
            let n = tags.len().min(t_max) as u64;
            (1..=n.min(s_max as u64))
                .map(|i| binomial(n, i))
                .sum::<u64>()
        })
        .sum()
}

pub fn estimate_storage_bytes(entry_count: u64, avg_entry_bytes: u64) -> u64 {
    entry_count * avg_entry_bytes
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    /// Magnitude of the log-log slope.
    pub beta: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least squares of `ln y` on `ln x` over the strictly positive points.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, AnalysisError> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = logs.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientData(n));
    }
    let nf = n as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::InsufficientData(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(PowerLawFit {
        alpha: intercept.exp(),
        beta: slope.abs(),
        slope,
        r_squared,
        points: n,
    })
}

/// `value -> number of occurrences`.
pub fn histogram<I: IntoIterator<Item = u64>>(values: I) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_default() += 1;
    }
    h
}

pub fn histogram_points(h: &BTreeMap<u64, u64>) -> Vec<(f64, f64)> {
    h.iter().map(|(&x, &y)| (x as f64, y as f64)).collect()
}

/// Counts sorted in decreasing order, paired with their 1-based rank.
pub fn rank_frequency<I: IntoIterator<Item = u64>>(counts: I) -> Vec<(f64, f64)> {
    let mut c: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    c.into_iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64, v as f64))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExtentStats {
    /// List length -> number of available keys with that length.
    pub length_histogram: BTreeMap<u64, u64>,
    /// Key size -> number of keys (available or suspended).
    pub keys_by_size: BTreeMap<usize, u64>,
    pub available_keys: u64,
    /// Percentage of available keys whose list length is at most `l_max`.
    pub coverage_pct: Option<f64>,
}

pub fn extent_stats(snapshot: &[SnapshotRecord], l_max: Option<u64>) -> ExtentStats {
    let mut st = ExtentStats::default();
    for rec in snapshot {
        *st.keys_by_size.entry(rec.key.len()).or_default() += 1;
        if rec.state == KeyState::Available {
            st.available_keys += 1;
            *st.length_histogram
                .entry(rec.live_len() as u64)
                .or_default() += 1;
        }
    }
    st.coverage_pct = l_max.map(|l| {
        if st.available_keys == 0 {
            100.0
        } else {
            let within: u64 = st.length_histogram.range(..=l).map(|(_, c)| c).sum();
            100.0 * within as f64 / st.available_keys as f64
        }
    });
    st
}

/// List lengths of the full multi-term index of a corpus, per key size:
/// `size -> (length -> number of keys)`.
pub fn key_length_histograms<'a, I>(
    tag_sets: I,
    s_max: usize,
    t_max: usize,
) -> BTreeMap<usize, BTreeMap<u64, u64>>
where
    I: IntoIterator<Item = &'a BTreeSet<String>>,
{
    let mut lengths: HashMap<Vec<String>, u64> = HashMap::new();
    for tags in tag_sets {
        let considered: Vec<String> = derive_considered_tags(tags, t_max).into_iter().collect();
        for key in crate::query::compute_subset_keys(&considered, s_max) {
            *lengths.entry(key.terms().to_vec()).or_default() += 1;
        }
    }
    let mut out: BTreeMap<usize, BTreeMap<u64, u64>> = BTreeMap::new();
    for (k, len) in lengths {
        *out.entry(k.len()).or_default().entry(len).or_default() += 1;
    }
    out
}

/// Mean Jaccard similarity of paired results, as a percentage. Two empty
/// results count as identical.
pub fn result_overlap(
    a: &[(Vec<String>, ResourceSet)],
    b: &[(Vec<String>, ResourceSet)],
) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::QueryMismatch(a.len().min(b.len())));
    }
    if a.is_empty() {
        return Ok(100.0);
    }
    let mut sum = 0.0;
    for (i, ((qa, ra), (qb, rb))) in a.iter().zip(b).enumerate() {
        if qa != qb {
            return Err(AnalysisError::QueryMismatch(i));
        }
        let union = ra.union(rb).count();
        sum += if union == 0 {
            1.0
        } else {
            ra.intersection(rb).count() as f64 / union as f64
        };
    }
    Ok(100.0 * sum / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrBoundCheck {
    pub published_bound: u64,
    pub derived_bound: u64,
    pub within_published: bool,
    pub within_derived: bool,
}

/// Worst-case transfer bounds of one incremental update of a key of size
/// `s` whose constituents changed by at most `r_max` resources each.
pub fn tr_bound_check(s: u64, r_max: u64, measured_tr: u64) -> TrBoundCheck {
    let published_bound = r_max * (s * s + 3 * s);
    let derived_bound = r_max * (s * s + 3 * s) / 2;
    TrBoundCheck {
        published_bound,
        derived_bound,
        within_published: measured_tr <= published_bound,
        within_derived: measured_tr <= derived_bound,
    }
}
