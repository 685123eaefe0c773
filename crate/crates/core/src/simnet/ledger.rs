//! Traffic and load accounting: contacted keys (CK), invoked keys (IK),
//! transferred resources (TR) and handled resources (HR).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A node of the simulated cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Gateway(u32),
    Backend(u64),
}

impl NodeId {
    pub fn is_gateway(&self) -> bool {
        matches!(self, NodeId::Gateway(_))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Gateway(g) => write!(f, "gw{g}"),
            NodeId::Backend(b) => write!(f, "be{b}"),
        }
    }
}

impl FromStr for NodeId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(n) = s.strip_prefix("gw") {
            n.parse().map(NodeId::Gateway).map_err(|e| e.to_string())
        } else if let Some(n) = s.strip_prefix("be") {
            n.parse().map(NodeId::Backend).map_err(|e| e.to_string())
        } else {
            Err(format!("bad node id `{s}`"))
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Query,
    Resume,
    IncrementalUpdate,
    SingleTermUpdate,
    CacheMaintenance,
}

impl Cause {
    pub const ALL: [Cause; 5] = [
        Cause::Query,
        Cause::Resume,
        Cause::IncrementalUpdate,
        Cause::SingleTermUpdate,
        Cause::CacheMaintenance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Cause::Query => "query",
            Cause::Resume => "resume",
            Cause::IncrementalUpdate => "incremental_update",
            Cause::SingleTermUpdate => "single_term_update",
            Cause::CacheMaintenance => "cache_maintenance",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub ck: u64,
    pub ik: u64,
    pub tr: u64,
    pub hr_gateway: u64,
    pub hr_backend: u64,
    pub messages: u64,
    /// Size probes; a subset of `ck`.
    pub probes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsLedger {
    pub total: Counters,
    pub by_cause: BTreeMap<Cause, Counters>,
    /// Cache lookups on gateways (hits and misses). Kept out of CK.
    pub gw_lookups: u64,
    pub cache_hits: u64,
    /// Tag deletes for tags the resource did not carry, duplicate adds.
    pub anomalies: u64,
    pub queries: u64,
    pub hr_by_node: BTreeMap<NodeId, u64>,
}

impl MetricsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cause(&self, cause: Cause) -> Counters {
        self.by_cause.get(&cause).copied().unwrap_or_default()
    }

    fn both(&mut self, cause: Cause, f: impl Fn(&mut Counters)) {
        f(&mut self.total);
        f(self.by_cause.entry(cause).or_default());
    }

    fn handle(&mut self, node: NodeId, n: u64, cause: Cause) {
        if n == 0 {
            return;
        }
        *self.hr_by_node.entry(node).or_default() += n;
        if node.is_gateway() {
            self.both(cause, |c| c.hr_gateway += n);
        } else {
            self.both(cause, |c| c.hr_backend += n);
        }
    }

    /// One message carrying `resources` from `from` to `to`. Both endpoints
    /// handle every resource. A message to the same node is local and free.
    pub fn account_message(&mut self, from: NodeId, to: NodeId, resources: u64, cause: Cause) {
        if from == to {
            return;
        }
        self.both(cause, |c| {
            c.messages += 1;
            c.tr += resources;
        });
        self.handle(from, resources, cause);
        self.handle(to, resources, cause);
    }

    /// A read or write access to a key in the index; `list_read` marks an
    /// invoked key whose list is read.
    pub fn account_key_access(&mut self, cause: Cause, list_read: bool) {
        self.both(cause, |c| {
            c.ck += 1;
            if list_read {
                c.ik += 1;
            }
        });
    }

    /// A result-size probe: a key contact that returns a count, no resources.
    pub fn account_probe(&mut self, from: NodeId, to: NodeId, cause: Cause) {
        self.account_key_access(cause, false);
        self.both(cause, |c| c.probes += 1);
        if from != to {
            self.both(cause, |c| c.messages += 1);
        }
    }

    /// Resources read from or written to local storage on `node`.
    pub fn account_local(&mut self, node: NodeId, resources: u64, cause: Cause) {
        self.handle(node, resources, cause);
    }

    pub fn hr_gateway_total(&self) -> u64 {
        self.total.hr_gateway
    }

    pub fn hr_backend_total(&self) -> u64 {
        self.total.hr_backend
    }
}

/// A metric expressed as a percentage of the baseline run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Relative {
    Percent(f64),
    /// Baseline was zero while the variant was not.
    Undefined,
}

impl Relative {
    fn of(baseline: u64, variant: u64) -> Self {
        match (baseline, variant) {
            (0, 0) => Relative::Percent(100.0),
            (0, _) => Relative::Undefined,
            (b, v) => Relative::Percent(100.0 * v as f64 / b as f64),
        }
    }
}

impl Serialize for Relative {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Relative::Percent(p) => s.serialize_f64(*p),
            Relative::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl fmt::Display for Relative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relative::Percent(p) => write!(f, "{p:.2}%"),
            Relative::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeReport {
    pub ck: Relative,
    pub ik: Relative,
    pub tr: Relative,
    pub hr_gateway_total: Relative,
    pub hr_backend_total: Relative,
    pub messages: Relative,
}

/// Normalizes `variant` against `baseline` (baseline = 100%).
pub fn compare_runs(baseline: &MetricsLedger, variant: &MetricsLedger) -> RelativeReport {
    let (b, v) = (&baseline.total, &variant.total);
    RelativeReport {
        ck: Relative::of(b.ck, v.ck),
        ik: Relative::of(b.ik, v.ik),
        tr: Relative::of(b.tr, v.tr),
        hr_gateway_total: Relative::of(b.hr_gateway, v.hr_gateway),
        hr_backend_total: Relative::of(b.hr_backend, v.hr_backend),
        messages: Relative::of(b.messages, v.messages),
    }
}

pub const CSV_HEADER: &str = "run_id,variant,scheme,ck,ik,tr,hr_gateway_total,hr_backend_total,cause,messages,probes,gw_lookups,cache_hits,queries,anomalies";

/// Appends one `total` row and one row per cause. The trailing four columns
/// are run-level and repeat on every row.
pub fn write_csv_rows(
    out: &mut String,
    run_id: &str,
    variant: &str,
    scheme: &str,
    l: &MetricsLedger,
) {
    let mut row = |cause: &str, c: &Counters| {
        let _ = writeln!(
            out,
            "{run_id},{variant},{scheme},{},{},{},{},{},{cause},{},{},{},{},{},{}",
            c.ck,
            c.ik,
            c.tr,
            c.hr_gateway,
            c.hr_backend,
            c.messages,
            c.probes,
            l.gw_lookups,
            l.cache_hits,
            l.queries,
            l.anomalies
        );
    };
    row("total", &l.total);
    for cause in Cause::ALL {
        row(cause.as_str(), &l.cause(cause));
    }
}

/// JSON document mirroring the CSV fields.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsSummary {
    pub run_id: String,
    pub variant: String,
    pub scheme: String,
    pub ck: u64,
    pub ik: u64,
    pub tr: u64,
    pub hr_gateway_total: u64,
    pub hr_backend_total: u64,
    pub messages: u64,
    pub probes: u64,
    pub gw_lookups: u64,
    pub cache_hits: u64,
    pub queries: u64,
    pub anomalies: u64,
    pub causes: BTreeMap<Cause, Counters>,
    pub hr_by_node: BTreeMap<NodeId, u64>,
}

impl MetricsSummary {
    pub fn new(run_id: &str, variant: &str, scheme: &str, l: &MetricsLedger) -> Self {
        MetricsSummary {
            run_id: run_id.into(),
            variant: variant.into(),
            scheme: scheme.into(),
            ck: l.total.ck,
            ik: l.total.ik,
            tr: l.total.tr,
            hr_gateway_total: l.total.hr_gateway,
            hr_backend_total: l.total.hr_backend,
            messages: l.total.messages,
            probes: l.total.probes,
            gw_lookups: l.gw_lookups,
            cache_hits: l.cache_hits,
            queries: l.queries,
            anomalies: l.anomalies,
            causes: Cause::ALL.iter().map(|&c| (c, l.cause(c))).collect(),
            hr_by_node: l.hr_by_node.clone(),
        }
    }

    /// Rebuilds the ledger totals from a summary (per-node HR included).
    pub fn to_ledger(&self) -> MetricsLedger {
        MetricsLedger {
            total: Counters {
                ck: self.ck,
                ik: self.ik,
                tr: self.tr,
                hr_gateway: self.hr_gateway_total,
                hr_backend: self.hr_backend_total,
                messages: self.messages,
                probes: self.probes,
            },
            by_cause: self
                .causes
                .iter()
                .filter(|(_, c)| **c != Counters::default())
                .map(|(&k, &c)| (k, c))
                .collect(),
            gw_lookups: self.gw_lookups,
            cache_hits: self.cache_hits,
            anomalies: self.anomalies,
            queries: self.queries,
            hr_by_node: self.hr_by_node.clone(),
        }
    }
}
