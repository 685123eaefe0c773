//! `simulate` and `report`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mtkindex::query::compute_subset_keys;
use mtkindex::simnet::{
    build_events, compare_runs, write_csv_rows, MetricsLedger, MetricsSummary, RelativeReport,
    RunOptions, CSV_HEADER,
};
use mtkindex::workload::{load_tag_dataset, parse_query_log, TagDataset};
use mtkindex::{CacheScheme, Cluster, IndexMode, Query, SystemConfig, TagKey};

use crate::{read_input, to_json, write_output, CliError, CliResult};

#[derive(Args)]
pub struct SimulateArgs {
    /// System `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tag action file.
    #[arg(long)]
    dataset: PathBuf,
    /// Query trace.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    s_max: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    ell: Option<u32>,
    #[arg(long)]
    delta_decay: Option<u64>,
    #[arg(long)]
    delta_update: Option<u64>,
    #[arg(long)]
    b_res: Option<u32>,
    #[arg(long)]
    b_susp: Option<u32>,
    #[arg(long)]
    c_ins: Option<u32>,
    #[arg(long)]
    c_del: Option<u32>,
    #[arg(long)]
    gateways: Option<u32>,
    /// Cache placement for the cached variants: uniform or dedicated.
    #[arg(long)]
    scheme: Option<String>,
    /// Comma separated list of stk, mtk, stk_cached, mtk_cached. Defaults to
    /// the mode and cache scheme of the configuration.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<String>,
    /// Variant to normalize the others against.
    #[arg(long)]
    baseline: Option<String>,
    /// Actions up to this timestamp form the initial corpus and are loaded
    /// without traffic.
    #[arg(long, default_value_t = 0)]
    load_until: u64,
    /// Resume every multi-term subset key of the queries before the run.
    #[arg(long)]
    preresume: bool,
    /// Check cache coherence after every event.
    #[arg(long)]
    check_coherence: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// `metrics.json` written by `simulate`.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    baseline: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
struct Variant {
    name: String,
    mode: IndexMode,
    cache_scheme: CacheScheme,
}

#[derive(Serialize)]
struct InputDigest {
    role: &'static str,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    artifact_version: &'static str,
    seed: u64,
    config: SystemConfig,
    variants: Vec<Variant>,
    baseline: Option<String>,
    load_until: u64,
    preresume: bool,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    runs: Vec<MetricsSummary>,
    #[serde(default, skip_deserializing)]
    relative: Option<BTreeMap<String, RelativeReport>>,
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn build_config(a: &SimulateArgs) -> CliResult<SystemConfig> {
    let mut cfg = match &a.config {
        Some(p) => SystemConfig::from_kv_text(&read_input(p)?).map_err(usage)?,
        None => SystemConfig::default(),
    };
    macro_rules! over {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { cfg.$field = v; })*
        };
    }
    over!(seed => rng_seed, s_max => s_max, t_max => t_max, ell => ell, delta_decay => delta_decay,
        delta_update => delta_update, b_res => b_res, b_susp => b_susp, c_ins => c_ins, c_del => c_del,
        gateways => n_gateways);
    if let Some(s) = &a.scheme {
        cfg.cache_scheme = s.parse().map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn variants(a: &SimulateArgs, cfg: &SystemConfig) -> CliResult<Vec<Variant>> {
    let cached_scheme = match cfg.cache_scheme {
        CacheScheme::None => CacheScheme::Uniform,
        s => s,
    };
    if a.variant.is_empty() {
        let name = match (cfg.mode, cfg.caching()) {
            (IndexMode::Stk, false) => "stk",
            (IndexMode::Mtk, false) => "mtk",
            (IndexMode::Stk, true) => "stk_cached",
            (IndexMode::Mtk, true) => "mtk_cached",
        };
        return Ok(vec![Variant {
            name: name.into(),
            mode: cfg.mode,
            cache_scheme: cfg.cache_scheme,
        }]);
    }
    if a.scheme.as_deref() == Some("none") && a.variant.iter().any(|v| v.ends_with("_cached")) {
        return Err(CliError::Usage(
            "cached variants need --scheme uniform or dedicated".into(),
        ));
    }
    let mut out: Vec<Variant> = Vec::new();
    for v in &a.variant {
        let (mode, cache_scheme) = match v.as_str() {
            "stk" => (IndexMode::Stk, CacheScheme::None),
            "mtk" => (IndexMode::Mtk, CacheScheme::None),
            "stk_cached" => (IndexMode::Stk, cached_scheme),
            "mtk_cached" => (IndexMode::Mtk, cached_scheme),
            _ => return Err(CliError::Usage(format!("unknown variant `{v}`"))),
        };
        if out.iter().any(|o| o.name == *v) {
            return Err(CliError::Usage(format!("variant `{v}` given twice")));
        }
        out.push(Variant {
            name: v.clone(),
            mode,
            cache_scheme,
        });
    }
    Ok(out)
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn run_id(v: &Variant, seed: u64) -> String {
    format!("{}-{}-s{seed}", v.name, v.cache_scheme)
}

fn run_variant(
    base: &SystemConfig,
    v: &Variant,
    ds: &TagDataset,
    queries: &[Query],
    load_until: u64,
    preresume: bool,
    check_coherence: bool,
) -> Result<MetricsLedger, String> {
    let cfg = SystemConfig {
        mode: v.mode,
        cache_scheme: v.cache_scheme,
        ..base.clone()
    };
    let mut cluster = Cluster::new(cfg.clone()).map_err(|e| e.to_string())?;
    cluster.bulk_load(ds.state_at(load_until), load_until);
    if preresume && cfg.mode == IndexMode::Mtk {
        let keys: BTreeSet<TagKey> = queries
            .iter()
            .flat_map(|q| compute_subset_keys(q.terms(), cfg.s_max))
            .filter(|k| !k.is_single())
            .collect();
        cluster.preresume(&keys, load_until);
    }
    let actions = ds
        .actions
        .iter()
        .filter(|a| a.ts > load_until)
        .map(|a| (a.ts, a.resource, a.tag.clone(), a.action));
    let events = build_events(actions, queries.iter().cloned(), &cfg, true);
    let opts = RunOptions {
        check_coherence,
        ..RunOptions::default()
    };
    cluster.run(events, opts).map_err(|e| e.to_string())?;
    Ok(cluster.ledger.clone())
}

fn relative_table(
    runs: &[MetricsSummary],
    baseline: &str,
) -> CliResult<BTreeMap<String, RelativeReport>> {
    let base = runs
        .iter()
        .find(|r| r.variant == baseline)
        .ok_or_else(|| CliError::Usage(format!("baseline `{baseline}` is not among the runs")))?
        .to_ledger();
    Ok(runs
        .iter()
        .map(|r| (r.variant.clone(), compare_runs(&base, &r.to_ledger())))
        .collect())
}

fn print_relative(rel: &BTreeMap<String, RelativeReport>, baseline: &str) {
    println!("relative to {baseline} (= 100%):");
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "variant", "ck", "ik", "tr", "hr_gw", "hr_be"
    );
    for (name, r) in rel {
        println!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10}",
            name,
            r.ck.to_string(),
            r.ik.to_string(),
            r.tr.to_string(),
            r.hr_gateway_total.to_string(),
            r.hr_backend_total.to_string()
        );
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = build_config(&a)?;
    let vars = variants(&a, &cfg)?;
    if let Some(b) = &a.baseline {
        if !vars.iter().any(|v| v.name == *b) {
            return Err(CliError::Usage(format!(
                "baseline `{b}` is not among the variants"
            )));
        }
    }
    let ds_text = read_input(&a.dataset)?;
    let q_text = read_input(&a.queries)?;

    let csv_path = a.out_dir.join("metrics.csv");
    let json_path = a.out_dir.join("metrics.json");
    let manifest_path = a.out_dir.join("manifest.json");
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.rng_seed,
        config: cfg.clone(),
        variants: vars.clone(),
        baseline: a.baseline.clone(),
        load_until: a.load_until,
        preresume: a.preresume,
        inputs: vec![
            InputDigest {
                role: "dataset",
                path: path_str(&a.dataset),
                sha256: sha256_hex(&ds_text),
            },
            InputDigest {
                role: "queries",
                path: path_str(&a.queries),
                sha256: sha256_hex(&q_text),
            },
        ],
        outputs: vec![path_str(&csv_path), path_str(&json_path)],
    };
    write_output(&manifest_path, &to_json(&manifest))?;

    let ds = load_tag_dataset(ds_text.lines());
    let (trace, bad) = parse_query_log(q_text.lines());
    if ds.stats.malformed > 0 || bad > 0 {
        eprintln!(
            "warning: skipped {} malformed dataset lines and {bad} malformed query lines",
            ds.stats.malformed
        );
    }
    let queries: Vec<Query> = trace.iter().filter_map(|r| r.to_query()).collect();

    let results: Vec<Result<MetricsLedger, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = vars
            .iter()
            .map(|v| {
                let (cfg, ds, queries) = (&cfg, &ds, &queries);
                s.spawn(move || {
                    run_variant(
                        cfg,
                        v,
                        ds,
                        queries,
                        a.load_until,
                        a.preresume,
                        a.check_coherence,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("worker panicked".into())))
            .collect()
    });

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut runs = Vec::new();
    for (v, res) in vars.iter().zip(results) {
        let ledger = res.map_err(|e| CliError::Runtime(format!("variant {}: {e}", v.name)))?;
        let id = run_id(v, cfg.rng_seed);
        let scheme = v.cache_scheme.to_string();
        write_csv_rows(&mut csv, &id, &v.name, &scheme, &ledger);
        runs.push(MetricsSummary::new(&id, &v.name, &scheme, &ledger));
    }
    let relative = match &a.baseline {
        Some(b) => Some(relative_table(&runs, b)?),
        None => None,
    };
    for r in &runs {
        println!(
            "{}: queries {} ck {} ik {} tr {} hr_gw {} hr_be {}",
            r.run_id, r.queries, r.ck, r.ik, r.tr, r.hr_gateway_total, r.hr_backend_total
        );
    }
    if let (Some(rel), Some(b)) = (&relative, &a.baseline) {
        print_relative(rel, b);
    }
    write_output(&csv_path, &csv)?;
    write_output(&json_path, &to_json(&MetricsFile { runs, relative }))?;
    Ok(())
}

pub fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let text = read_input(&a.metrics)?;
    let file: MetricsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.metrics.display())))?;
    let rel = relative_table(&file.runs, &a.baseline)?;
    print_relative(&rel, &a.baseline);
    if let Some(p) = &a.out {
        write_output(p, &to_json(&rel))?;
    }
    Ok(())
}
