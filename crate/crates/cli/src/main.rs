use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use mtkindex::analysis::{self, DEFAULT_ENTRY_BYTES};
use mtkindex::workload::{
    self, clean_query_log, filter_nonempty, generate_synthetic, load_tag_dataset, match_vocabulary,
    parse_query_log, write_query_log, GeneratorConfig, Stopwords,
};

mod simulate;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing inputs, invalid configuration. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_input(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{}: no such file", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_output(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Parser)]
#[command(
    name = "mtkindex",
    version,
    about = "Multi-term inverted index simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw query log.
    Clean(CleanArgs),
    /// Keep only query terms that occur as tags in a dataset.
    Match(MatchArgs),
    /// Keep only queries with a non-empty answer on a dataset.
    FilterNonempty(FilterArgs),
    /// Generate a synthetic tag dataset and query trace.
    Generate(GenerateArgs),
    /// Entry counts, storage estimate and distribution fits of a dataset.
    Analyze(AnalyzeArgs),
    /// Replay a dataset and query trace through the simulated cluster.
    Simulate(Box<simulate::SimulateArgs>),
    /// Print metrics of a simulate run relative to a baseline variant.
    Report(simulate::ReportArgs),
}

#[derive(Args)]
struct CleanArgs {
    #[arg(long)]
    input: PathBuf,
    /// One stopword per line. Defaults to the bundled English list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-step statistics (JSON).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    t_max: usize,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resources: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Writes dataset.tsv and queries.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 3)]
    s_max: usize,
    #[arg(long, default_value_t = 20)]
    t_max: usize,
    /// Only replay actions up to this timestamp.
    #[arg(long)]
    until: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_ENTRY_BYTES)]
    entry_bytes: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_clean(a: CleanArgs) -> CliResult<()> {
    let text = read_input(&a.input)?;
    let stop = match &a.stopwords {
        Some(p) => Stopwords::parse(&read_input(p)?),
        None => Stopwords::english(),
    };
    let (trace, stats) = clean_query_log(text.lines(), &stop);
    write_output(&a.out, &write_query_log(&trace))?;
    if let Some(p) = &a.stats {
        write_output(p, &to_json(&stats))?;
    }
    println!(
        "read {} lines, kept {} queries (unreadable {})",
        stats.lines_read, stats.queries_out, stats.unreadable
    );
    Ok(())
}

#[derive(Serialize)]
struct MatchReport {
    #[serde(flatten)]
    stats: workload::VocabularyStats,
    distinct_terms_pct: f64,
    term_occurrences_pct: f64,
    queries_pct: f64,
}

fn cmd_match(a: MatchArgs) -> CliResult<()> {
    let (trace, bad) = parse_query_log(read_input(&a.queries)?.lines());
    let ds = load_tag_dataset(read_input(&a.dataset)?.lines());
    let vocab = ds.resources.values().flatten().cloned().collect();
    let (out, stats) = match_vocabulary(&trace, &vocab);
    write_output(&a.out, &write_query_log(&out))?;
    println!(
        "kept {}/{} queries, {:.1}% of distinct terms ({} unreadable lines)",
        stats.queries_retained,
        stats.queries_before,
        stats.distinct_terms_pct(),
        bad
    );
    if let Some(p) = &a.stats {
        let report = MatchReport {
            distinct_terms_pct: stats.distinct_terms_pct(),
            term_occurrences_pct: stats.term_occurrences_pct(),
            queries_pct: stats.queries_pct(),
            stats,
        };
        write_output(p, &to_json(&report))?;
    }
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> CliResult<()> {
    if a.t_max == 0 {
        return Err(CliError::Usage("t_max must be >= 1".into()));
    }
    let (trace, _) = parse_query_log(read_input(&a.queries)?.lines());
    let ds = load_tag_dataset(read_input(&a.dataset)?.lines());
    let out = filter_nonempty(&trace, &ds.resources, a.t_max);
    write_output(&a.out, &write_query_log(&out))?;
    println!("kept {}/{} queries", out.len(), trace.len());
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => GeneratorConfig::from_kv_text(&read_input(p)?)
            .map_err(|e| CliError::Usage(e.to_string()))?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.resources {
        cfg.n_resources = n;
    }
    if let Some(n) = a.queries {
        cfg.n_queries = n;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let w = generate_synthetic(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_output(&a.out_dir.join("dataset.tsv"), &w.to_dataset().to_text())?;
    write_output(&a.out_dir.join("queries.tsv"), &write_query_log(&w.queries))?;
    println!(
        "{} resources, {} actions, {} queries",
        w.resources.len(),
        w.actions.len(),
        w.queries.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeReport {
    resources: usize,
    s_max: usize,
    t_max: usize,
    entry_count: u64,
    entry_bytes: u64,
    storage_bytes: u64,
    tags_per_resource: std::collections::BTreeMap<u64, u64>,
    tags_per_resource_fit: Option<analysis::PowerLawFit>,
    tag_rank_fit: Option<analysis::PowerLawFit>,
    /// Key size -> (list length -> number of keys).
    list_lengths: std::collections::BTreeMap<usize, std::collections::BTreeMap<u64, u64>>,
    list_length_fits: std::collections::BTreeMap<usize, Option<analysis::PowerLawFit>>,
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    if a.s_max == 0 {
        return Err(CliError::Usage("constraint violated: s_max >= 1".into()));
    }
    if a.t_max == 0 {
        return Err(CliError::Usage("constraint violated: t_max >= 1".into()));
    }
    let ds = load_tag_dataset(read_input(&a.dataset)?.lines());
    let corpus = match a.until {
        Some(t) => ds.state_at(t),
        None => ds.resources.clone(),
    };
    let entry_count = analysis::count_list_entries(corpus.values(), a.s_max, a.t_max);
    let tags_per_resource =
        analysis::histogram(corpus.values().map(|t| t.len() as u64).filter(|&n| n > 0));
    let mut tag_use: std::collections::BTreeMap<&str, u64> = std::collections::BTreeMap::new();
    for t in corpus.values().flatten() {
        *tag_use.entry(t.as_str()).or_default() += 1;
    }
    let list_lengths = analysis::key_length_histograms(corpus.values(), a.s_max, a.t_max);
    let list_length_fits = list_lengths
        .iter()
        .map(|(&s, h)| {
            (
                s,
                analysis::fit_power_law(&analysis::histogram_points(h)).ok(),
            )
        })
        .collect();
    let report = AnalyzeReport {
        resources: corpus.values().filter(|t| !t.is_empty()).count(),
        s_max: a.s_max,
        t_max: a.t_max,
        entry_count,
        entry_bytes: a.entry_bytes,
        storage_bytes: analysis::estimate_storage_bytes(entry_count, a.entry_bytes),
        tags_per_resource_fit: analysis::fit_power_law(&analysis::histogram_points(
            &tags_per_resource,
        ))
        .ok(),
        tags_per_resource,
        tag_rank_fit: analysis::fit_power_law(&analysis::rank_frequency(tag_use.into_values()))
            .ok(),
        list_lengths,
        list_length_fits,
    };
    write_output(&a.out, &to_json(&report))?;
    println!(
        "{} resources, {} list entries, {} bytes",
        report.resources, report.entry_count, report.storage_bytes
    );
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Clean(a) => cmd_clean(a),
        Command::Match(a) => cmd_match(a),
        Command::FilterNonempty(a) => cmd_filter(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => simulate::cmd_simulate(*a),
        Command::Report(a) => simulate::cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
