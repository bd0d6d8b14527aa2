use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use labelmesh::bench::{
    check_ordering, measure_decision_latency, render_table, run_suite, write_csv_file, BenchResult, BenchScenario,
    BenchTarget, LatencyStats, LocalStack, OrderingViolation, StackCaches, ScenarioId, DEFAULT_REQUESTS_PER_LEVEL, DEFAULT_ROUNDS, DEFAULT_WARMUP,
    REFERENCE_DECISION_LATENCY_MS,
};
use labelmesh::demo::seed_demo;
use labelmesh::dsl::{apply_labels, parse_schema, LabelingOutcome};
use labelmesh::enforcement::AuthzRequest;
use labelmesh::model::{Label, LabelSet};
use labelmesh::policy::{parse_policy, TrackingPolicy};
use labelmesh::store::HttpStoreClient;
use labelmesh::tracker::{run_audit_with_journal, AuditReport};
use serde::Serialize;

use crate::config::{expand, GlobalArgs, GlobalConfig};

const FINDINGS: u8 = 2;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_policy(path: &Path) -> Result<TrackingPolicy> {
    parse_policy(&read(path)?).with_context(|| format!("invalid policy {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub async fn audit(args: &GlobalArgs) -> Result<ExitCode> {
    let config = GlobalConfig::load(args, None)?;
    let policy = load_policy(config.policy_path()?)?;
    let store = HttpStoreClient::new(&config.store_base());
    let report = run_audit_with_journal(&store, &policy, &config.journal).await?;
    if args.json {
        print_json(&report)?;
    } else {
        print!("{}", audit_table(&report));
    }
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(FINDINGS) })
}

fn audit_table(report: &AuditReport) -> String {
    let mut out = String::new();
    let width = |f: fn(&labelmesh::model::Finding) -> usize, min| report.findings.iter().map(f).max().unwrap_or(0).max(min);
    let wc = width(|f| f.check_id.as_str().len(), 5);
    let wb = width(|f| f.bucket.len(), 6);
    let wk = width(|f| f.key.as_ref().map_or(1, |k| k.as_str().len()), 3);
    if !report.findings.is_empty() {
        out.push_str(&format!("{:wc$}  {:wb$}  {:wk$}  DETAIL\n", "CHECK", "BUCKET", "KEY"));
        for f in &report.findings {
            let key = f.key.as_ref().map_or("-", |k| k.as_str());
            out.push_str(&format!("{:wc$}  {:wb$}  {:wk$}  {}\n", f.check_id.as_str(), f.bucket, key, f.detail));
        }
    }
    out.push_str(&format!(
        "{} finding(s); scanned {} bucket(s), {} object(s) at {}; policy sha256 {}\n",
        report.findings.len(),
        report.scanned_buckets,
        report.scanned_objects,
        report.run_at,
        &report.policy_hash[..12],
    ));
    out
}

fn parse_labels(text: &str) -> Result<LabelSet> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Label::new(s).with_context(|| format!("invalid label {s:?}")))
        .collect()
}

fn ask(title: &str) -> Option<LabelSet> {
    let stdin = std::io::stdin();
    loop {
        eprint!("no keyword in {title:?}; labels (comma-separated, empty to skip): ");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).ok()? == 0 {
            return None;
        }
        match parse_labels(&line) {
            Ok(set) => return Some(set),
            Err(e) => eprintln!("{e:#}"),
        }
    }
}

pub async fn label(args: &GlobalArgs, bucket: &str, assign: Option<&str>) -> Result<ExitCode> {
    let config = GlobalConfig::load(args, None)?;
    let path = config.schema_path()?;
    let schema = parse_schema(&read(path)?).with_context(|| format!("invalid schema {}", path.display()))?;
    let store = HttpStoreClient::new(&config.store_base());
    let fixed = assign.map(parse_labels).transpose()?;
    let interactive = fixed.is_none() && !args.json && std::io::stdin().is_terminal();
    let outcomes = apply_labels(&store, bucket, &schema, |title| match &fixed {
        Some(set) => Some(set.clone()),
        None if interactive => ask(title),
        None => None,
    })
    .await?;
    if args.json {
        print_json(&outcomes)?;
    } else {
        print!("{}", label_lines(&outcomes));
    }
    Ok(ExitCode::SUCCESS)
}

fn label_lines(outcomes: &[LabelingOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        let source = serde_json::to_value(o.source).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let line = match (&o.conflict, o.changed()) {
            (Some(target), _) => format!("{source:13} {} (not renamed: {target} exists)", o.original_title),
            (None, true) => format!("{source:13} {} -> {}", o.original_title, o.new_title),
            (None, false) => format!("{source:13} {} (unchanged)", o.original_title),
        };
        out.push_str(&line);
        out.push('\n');
    }
    let changed = outcomes.iter().filter(|o| o.changed()).count();
    out.push_str(&format!("{changed} of {} object(s) relabeled\n", outcomes.len()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioChoice {
    Direct,
    Proxy,
    Full,
    All,
}

impl ScenarioChoice {
    fn ids(self) -> Vec<ScenarioId> {
        match self {
            ScenarioChoice::Direct => vec![ScenarioId::Direct],
            ScenarioChoice::Proxy => vec![ScenarioId::ProxyOnly],
            ScenarioChoice::Full => vec![ScenarioId::ProxyPdp],
            ScenarioChoice::All => ScenarioId::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "all")]
    scenario: ScenarioChoice,
    /// Concurrency levels.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    levels: Vec<usize>,
    /// Requests per level.
    #[arg(long, default_value_t = DEFAULT_REQUESTS_PER_LEVEL)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    /// Chunks per level; scenarios alternate between chunks.
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    rounds: usize,
    /// Write every measured request to this CSV file.
    #[arg(long)]
    csv: Option<std::path::PathBuf>,
    /// Isolated decision calls per cache mode; 0 skips the measurement.
    #[arg(long, default_value_t = 1000)]
    decision_samples: usize,
    /// Allowed excess of a cheaper wiring's median over a costlier one's.
    #[arg(long, default_value_t = 0.05)]
    slack: f64,
    /// Store base URL for DIRECT. Giving any of the three URLs benchmarks
    /// running services instead of an in-process stack.
    #[arg(long)]
    direct_url: Option<String>,
    /// Proxy without authorization, for PROXY_ONLY.
    #[arg(long)]
    proxy_url: Option<String>,
    /// Enforcing proxy, for PROXY_PDP.
    #[arg(long)]
    pep_url: Option<String>,
    /// `bucket/key` to fetch when benchmarking running services.
    #[arg(long)]
    resource: Option<String>,
    #[arg(long, default_value = labelmesh::bench::BENCH_WORKLOAD)]
    workload: String,
    /// Decision cache TTL of the in-process enforcing proxy. Off by default
    /// so that PROXY_PDP requests reach the decision point; `--cache-ttl-ms`
    /// sets the decision point's own cache.
    #[arg(long, default_value_t = 0)]
    pep_cache_ttl_ms: u64,
}

#[derive(Debug, Serialize)]
struct DecisionLatency {
    cache_off: LatencyStats,
    cache_on: LatencyStats,
    reference_ms: f64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    results: Vec<BenchResult>,
    ordering_violations: Vec<OrderingViolation>,
    decision: Option<DecisionLatency>,
    csv_rows: Option<usize>,
}

pub async fn bench(args: &GlobalArgs, b: &BenchArgs) -> Result<ExitCode> {
    let config = GlobalConfig::load(args, None)?;
    let remote = b.direct_url.is_some() || b.proxy_url.is_some() || b.pep_url.is_some();
    let caches = StackCaches { pdp_ttl: config.cache_ttl, pep_ttl: Duration::from_millis(b.pep_cache_ttl_ms) };
    let stack = if remote { None } else { Some(LocalStack::start(caches).await?) };

    let target = |id: ScenarioId| -> Result<BenchTarget> {
        if let Some(stack) = &stack {
            let mut t = stack.target(id);
            t.workload = b.workload.clone();
            return Ok(t);
        }
        let (url, flag) = match id {
            ScenarioId::Direct => (&b.direct_url, "--direct-url"),
            ScenarioId::ProxyOnly => (&b.proxy_url, "--proxy-url"),
            ScenarioId::ProxyPdp => (&b.pep_url, "--pep-url"),
        };
        let Some(url) = url else { bail!("scenario {id} needs {flag}") };
        let Some(resource) = &b.resource else { bail!("benchmarking running services needs --resource") };
        Ok(BenchTarget { base_url: url.clone(), resource: resource.clone(), workload: b.workload.clone() })
    };

    let scenarios = b
        .scenario
        .ids()
        .into_iter()
        .map(|id| {
            Ok(BenchScenario {
                id,
                concurrency_levels: b.levels.clone(),
                requests_per_level: b.n,
                warmup: b.warmup,
                target: target(id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let results = run_suite(&scenarios, b.rounds).await?;
    let ordering_violations = check_ordering(&results, b.slack);

    let pdp_url = match (&stack, &config.pdp_url) {
        (Some(s), _) => Some(s.pdp_url.clone()),
        (None, Some(u)) => Some(u.as_str().trim_end_matches('/').to_string()),
        (None, None) => None,
    };
    let decision = match (pdp_url, b.decision_samples) {
        (Some(url), n) if n > 0 => {
            let resource = stack.as_ref().map(|s| s.decision_request().resource).or(b.resource.clone());
            match resource {
                Some(resource) => {
                    let req = AuthzRequest::new(b.workload.clone(), resource, "GET");
                    let cache_off = measure_decision_latency(&url, &req, n, false).await?;
                    let cache_on = measure_decision_latency(&url, &req, n, true).await?;
                    Some(DecisionLatency { cache_off, cache_on, reference_ms: REFERENCE_DECISION_LATENCY_MS })
                }
                None => None,
            }
        }
        _ => None,
    };
    let csv_rows = b.csv.as_ref().map(|p| write_csv_file(&results, &expand(p))).transpose()?;
    if let Some(stack) = stack {
        stack.stop().await;
    }

    let valid = results.iter().all(BenchResult::is_valid);
    let report = BenchReport { results, ordering_violations, decision, csv_rows };
    if args.json {
        print_json(&report)?;
    } else {
        print!("{}", bench_text(&report, b.slack));
    }
    Ok(if !valid {
        ExitCode::FAILURE
    } else if report.ordering_violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(FINDINGS)
    })
}

fn bench_text(report: &BenchReport, slack: f64) -> String {
    let mut out = render_table(&report.results);
    if let Some(env) = report.results.first().map(|r| &r.environment) {
        out.push_str(&format!("environment: {env}\n"));
    }
    for r in &report.results {
        for l in r.levels.iter().filter(|l| l.errors > 0) {
            out.push_str(&format!("{} at concurrency {}: {} error(s), level aborted\n", r.scenario, l.concurrency, l.errors));
        }
    }
    if report.results.len() > 1 {
        if report.ordering_violations.is_empty() {
            out.push_str(&format!("median ordering DIRECT <= PROXY_ONLY <= PROXY_PDP holds ({:.0}% slack)\n", slack * 100.0));
        }
        for v in &report.ordering_violations {
            out.push_str(&format!(
                "ordering violated at concurrency {}: {} median {:.3} ms > {} median {:.3} ms\n",
                v.concurrency, v.faster, v.faster_median_ms, v.slower, v.slower_median_ms
            ));
        }
    }
    if let Some(d) = &report.decision {
        out.push_str(&format!(
            "single decision, cache off: median {:.3} ms, mean {:.3} ms, p95 {:.3} ms (n={})\n",
            d.cache_off.median_ms, d.cache_off.mean_ms, d.cache_off.p95_ms, d.cache_off.samples
        ));
        out.push_str(&format!(
            "single decision, cache on:  median {:.3} ms, mean {:.3} ms, p95 {:.3} ms (n={})\n",
            d.cache_on.median_ms, d.cache_on.mean_ms, d.cache_on.p95_ms, d.cache_on.samples
        ));
        out.push_str(&format!("reference: {:.2} ms per policy check on the original Istio/Mixer setup\n", d.reference_ms));
    }
    if let Some(rows) = report.csv_rows {
        out.push_str(&format!("{rows} CSV row(s) written\n"));
    }
    out
}

pub async fn demo_seed(args: &GlobalArgs) -> Result<ExitCode> {
    let config = GlobalConfig::load(args, None)?;
    let store = HttpStoreClient::new(&config.store_base());
    let summary = seed_demo(&store).await?;
    if args.json {
        print_json(&summary)?;
    } else {
        println!("created buckets: {}", summary.buckets.join(", "));
        for u in &summary.uploads {
            println!("uploaded {u}");
        }
        println!("deleted buckets: {}", summary.deleted_buckets.join(", "));
        println!("store clock advanced {} days", summary.clock_advanced_secs / 86_400);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Serialize)]
struct PolicySummary<'a> {
    path: &'a Path,
    digest: String,
    lifecycle_rules: usize,
    flow_rules: usize,
    geo_rules: usize,
    canonical: String,
}

pub fn policy_check(args: &GlobalArgs, file: Option<&Path>) -> Result<ExitCode> {
    let config;
    let path = match file {
        Some(p) => p,
        None => {
            config = GlobalConfig::load(args, None)?;
            config.policy_path()?
        }
    };
    let policy = load_policy(path)?;
    let summary = PolicySummary {
        path,
        digest: policy.digest(),
        lifecycle_rules: policy.lifecycle_rules.len(),
        flow_rules: policy.flow_rules.len(),
        geo_rules: policy.geo_rules.len(),
        canonical: policy.serialize(),
    };
    if args.json {
        print_json(&summary)?;
    } else {
        print!("{}", summary.canonical);
        println!(
            "# {}: {} lifecycle, {} flow, {} geo rule(s); sha256 {}",
            path.display(),
            summary.lifecycle_rules,
            summary.flow_rules,
            summary.geo_rules,
            summary.digest
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn show_config(args: &GlobalArgs) -> Result<ExitCode> {
    print_json(&GlobalConfig::load(args, None)?)?;
    Ok(ExitCode::SUCCESS)
}
