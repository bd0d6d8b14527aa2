//! Latency benchmark: file fetches at increasing client concurrency for
//! three wirings (store directly, through the proxy without authorization,
//! and the full proxy + decision point path), plus isolated decision timing.

use std::fmt::Write as _;
use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::enforcement::{
    server, Authorizer, AuthzRequest, DecisionCache, HttpIntrospector, Pdp, PdpClient, Pep, DEFAULT_CAPACITY,
    DEFAULT_TTL, WORKLOAD_HEADER,
};
use crate::model::{Region, Timestamp};
use crate::policy::parse_policy;
use crate::store::{self, ObjectStore, StoreConfig};
use crate::wire::encode_resource;

/// Single policy-check latency measured for the original Istio/Mixer setup, in ms.
pub const REFERENCE_DECISION_LATENCY_MS: f64 = 17.31;
pub const DEFAULT_LEVELS: [usize; 6] = [1, 2, 4, 8, 16, 32];
pub const DEFAULT_REQUESTS_PER_LEVEL: usize = 200;
pub const DEFAULT_WARMUP: usize = 100;
pub const DEFAULT_ROUNDS: usize = 10;
pub const MIN_DECISION_SAMPLES: usize = 30;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("{got} samples requested, at least {min} needed")]
    TooFewSamples { got: usize, min: usize },
    #[error("request failed: {0}")]
    Request(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioId {
    Direct,
    ProxyOnly,
    ProxyPdp,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::Direct, ScenarioId::ProxyOnly, ScenarioId::ProxyPdp];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Direct => "DIRECT",
            ScenarioId::ProxyOnly => "PROXY_ONLY",
            ScenarioId::ProxyPdp => "PROXY_PDP",
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to fetch: `GET {base_url}/files/{resource}` as `workload`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchTarget {
    pub base_url: String,
    pub resource: String,
    pub workload: String,
}

impl BenchTarget {
    pub fn url(&self) -> Result<String, BenchError> {
        let (bucket, key) = self
            .resource
            .split_once('/')
            .ok_or_else(|| BenchError::Config(format!("resource {} is not bucket/key", self.resource)))?;
        Ok(format!("{}/files/{}", self.base_url.trim_end_matches('/'), encode_resource(bucket, key)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchScenario {
    pub id: ScenarioId,
    pub concurrency_levels: Vec<usize>,
    pub requests_per_level: usize,
    pub warmup: usize,
    pub target: BenchTarget,
}

impl BenchScenario {
    pub fn new(id: ScenarioId, target: BenchTarget) -> Self {
        BenchScenario {
            id,
            concurrency_levels: DEFAULT_LEVELS.to_vec(),
            requests_per_level: DEFAULT_REQUESTS_PER_LEVEL,
            warmup: DEFAULT_WARMUP,
            target,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.concurrency_levels.is_empty() || self.concurrency_levels.contains(&0) {
            return Err(BenchError::Config("concurrency levels must be positive".into()));
        }
        if self.requests_per_level == 0 {
            return Err(BenchError::Config("requests per level must be positive".into()));
        }
        self.target.url().map(|_| ())
    }
}

/// Latency summary in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// `None` for an empty sample.
    pub fn from_samples(latencies_ms: &[f64]) -> Option<Self> {
        if latencies_ms.is_empty() {
            return None;
        }
        let mut sorted = latencies_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        // nearest-rank percentile
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(LatencyStats {
            samples: n,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: sorted[rank - 1],
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub concurrency: usize,
    pub stats: Option<LatencyStats>,
    pub throughput_rps: f64,
    pub errors: usize,
    /// Set when a failed request stopped the level early.
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub scenario: ScenarioId,
    pub concurrency: usize,
    pub seq: usize,
    pub latency_ms: f64,
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: ScenarioId,
    pub levels: Vec<LevelResult>,
    #[serde(skip)]
    pub samples: Vec<Sample>,
    pub environment: String,
}

impl BenchResult {
    pub fn is_valid(&self) -> bool {
        self.levels.iter().all(|l| l.errors == 0 && !l.aborted)
    }

    pub fn level(&self, concurrency: usize) -> Option<&LevelResult> {
        self.levels.iter().find(|l| l.concurrency == concurrency)
    }
}

pub fn environment_note() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}/{} {} cpus, all services on one host", std::env::consts::OS, std::env::consts::ARCH, cpus)
}

fn client(pool: usize) -> reqwest::Client {
    reqwest::Client::builder()
        .pool_max_idle_per_host(pool.max(1))
        .timeout(Duration::from_secs(30))
        .build()
        .expect("static client config")
}

async fn fetch(http: &reqwest::Client, url: &str, workload: &str) -> Result<u16, String> {
    let resp = http.get(url).header(WORKLOAD_HEADER, workload).send().await.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    resp.bytes().await.map_err(|e| e.to_string())?;
    Ok(status)
}

struct LevelRun {
    samples: Vec<Sample>,
    errors: usize,
    aborted: bool,
    wall: Duration,
}

async fn run_level(
    http: &reqwest::Client,
    id: ScenarioId,
    url: &Arc<str>,
    workload: &Arc<str>,
    concurrency: usize,
    first_seq: usize,
    n: usize,
) -> LevelRun {
    let next = Arc::new(AtomicUsize::new(0));
    let abort = Arc::new(AtomicBool::new(false));
    let errors = Arc::new(AtomicUsize::new(0));
    let samples = Arc::new(Mutex::new(Vec::with_capacity(n)));
    let started = Instant::now();
    let workers: Vec<_> = (0..concurrency)
        .map(|_| {
            let (http, url, workload) = (http.clone(), url.clone(), workload.clone());
            let (next, abort, errors, samples) = (next.clone(), abort.clone(), errors.clone(), samples.clone());
            tokio::spawn(async move {
                loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let seq = first_seq + i;
                    let t = Instant::now();
                    let outcome = fetch(&http, &url, &workload).await;
                    let latency_ms = t.elapsed().as_secs_f64() * 1e3;
                    match outcome {
                        Ok(status) if (200..300).contains(&status) => {
                            let sample = Sample { scenario: id, concurrency, seq, latency_ms, status };
                            samples.lock().unwrap_or_else(|e| e.into_inner()).push(sample);
                        }
                        other => {
                            tracing::warn!(scenario = %id, concurrency, seq, ?other, "request failed, aborting level");
                            errors.fetch_add(1, Ordering::Relaxed);
                            abort.store(true, Ordering::Relaxed);
                        }
                    }
                }
            })
        })
        .collect();
    for w in workers {
        let _ = w.await;
    }
    let wall = started.elapsed();
    let mut samples = std::mem::take(&mut *samples.lock().unwrap_or_else(|e| e.into_inner()));
    samples.sort_by_key(|s| s.seq);
    LevelRun { samples, errors: errors.load(Ordering::Relaxed), aborted: abort.load(Ordering::Relaxed), wall }
}

/// Runs every concurrency level of `scenario` after an excluded warmup.
pub async fn run_bench(scenario: &BenchScenario) -> Result<BenchResult, BenchError> {
    let mut results = run_suite(std::slice::from_ref(scenario), 1).await?;
    Ok(results.remove(0))
}

struct Prepared {
    http: reqwest::Client,
    url: Arc<str>,
    workload: Arc<str>,
}

async fn prepare(scenario: &BenchScenario) -> Result<Prepared, BenchError> {
    scenario.validate()?;
    let max = scenario.concurrency_levels.iter().copied().max().unwrap_or(1);
    let http = client(max);
    let url: Arc<str> = scenario.target.url()?.into();
    let workload: Arc<str> = scenario.target.workload.as_str().into();
    if scenario.warmup > 0 {
        // at full width, so every level starts with warm connection pools
        let run = run_level(&http, scenario.id, &url, &workload, max, 0, scenario.warmup.max(max)).await;
        if run.errors > 0 {
            let url = &*url;
            return Err(BenchError::Request(format!("warmup against {url} failed")));
        }
    }
    Ok(Prepared { http, url, workload })
}

/// Runs several scenarios level by level, splitting each level into up to
/// `rounds` chunks and alternating scenarios between chunks, so that slow
/// drift of the host does not land on one scenario. Chunks never drop below
/// four requests per in-flight slot. All scenarios must share levels and
/// request counts.
pub async fn run_suite(scenarios: &[BenchScenario], rounds: usize) -> Result<Vec<BenchResult>, BenchError> {
    let Some(first) = scenarios.first() else { return Ok(Vec::new()) };
    if scenarios
        .iter()
        .any(|s| s.concurrency_levels != first.concurrency_levels || s.requests_per_level != first.requests_per_level)
    {
        return Err(BenchError::Config("scenarios in one suite need the same levels and request count".into()));
    }
    let mut prepared = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        prepared.push(prepare(s).await?);
    }
    let n = first.requests_per_level;
    let mut results: Vec<BenchResult> = scenarios
        .iter()
        .map(|s| BenchResult { scenario: s.id, levels: Vec::new(), samples: Vec::new(), environment: environment_note() })
        .collect();

    for (li, &concurrency) in first.concurrency_levels.iter().enumerate() {
        let chunks = rounds.min(n / (4 * concurrency)).max(1);
        let mut runs: Vec<LevelRun> = scenarios
            .iter()
            .map(|_| LevelRun { samples: Vec::new(), errors: 0, aborted: false, wall: Duration::ZERO })
            .collect();
        let mut done = 0;
        for round in 0..chunks {
            let size = n * (round + 1) / chunks - done;
            let m = scenarios.len();
            for k in 0..m {
                // rotate the start and flip direction every other round, so
                // no scenario always follows the same one
                let k = if (round + li) % 2 == 0 { k } else { m - 1 - k };
                let i = (k + round + li) % m;
                if runs[i].aborted {
                    continue;
                }
                let p = &prepared[i];
                let chunk = run_level(&p.http, scenarios[i].id, &p.url, &p.workload, concurrency, done, size).await;
                let run = &mut runs[i];
                run.samples.extend(chunk.samples);
                run.errors += chunk.errors;
                run.aborted |= chunk.aborted;
                run.wall += chunk.wall;
            }
            done += size;
        }
        for (result, run) in results.iter_mut().zip(runs) {
            let latencies: Vec<f64> = run.samples.iter().map(|s| s.latency_ms).collect();
            result.levels.push(LevelResult {
                concurrency,
                stats: LatencyStats::from_samples(&latencies),
                throughput_rps: run.samples.len() as f64 / run.wall.as_secs_f64().max(1e-9),
                errors: run.errors,
                aborted: run.aborted,
            });
            result.samples.extend(run.samples);
        }
    }
    Ok(results)
}

/// Writes one row per measured request.
pub fn write_csv<W: io::Write>(results: &[BenchResult], out: W) -> Result<usize, BenchError> {
    let mut w = csv::Writer::from_writer(out);
    let mut rows = 0;
    for r in results {
        for s in &r.samples {
            w.serialize(s)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

pub fn write_csv_file(results: &[BenchResult], path: &Path) -> Result<usize, BenchError> {
    write_csv(results, std::fs::File::create(path)?)
}

/// Side-by-side median/mean/p95 per concurrency level.
pub fn render_table(results: &[BenchResult]) -> String {
    let mut levels: Vec<usize> = results.iter().flat_map(|r| r.levels.iter().map(|l| l.concurrency)).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:>5}", "conc");
    for r in results {
        let _ = write!(out, " | {:^32}", r.scenario.as_str());
    }
    out.push('\n');
    let _ = write!(out, "{:>5}", "");
    for _ in results {
        let _ = write!(out, " | {:>7} {:>7} {:>7} {:>8}", "median", "mean", "p95", "rps");
    }
    out.push('\n');
    for c in levels {
        let _ = write!(out, "{c:>5}");
        for r in results {
            match r.level(c) {
                Some(LevelResult { stats: Some(s), throughput_rps, errors, .. }) => {
                    let _ = write!(out, " | {:>7.3} {:>7.3} {:>7.3} {:>8.0}", s.median_ms, s.mean_ms, s.p95_ms, throughput_rps);
                    if *errors > 0 {
                        let _ = write!(out, " ({errors} err)");
                    }
                }
                _ => {
                    let _ = write!(out, " | {:^32}", "-");
                }
            }
        }
        out.push('\n');
    }
    out.push_str("latencies in ms\n");
    out
}

/// A level where a cheaper wiring was slower than a more expensive one by
/// more than the slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingViolation {
    pub concurrency: usize,
    pub faster: ScenarioId,
    pub faster_median_ms: f64,
    pub slower: ScenarioId,
    pub slower_median_ms: f64,
}

/// Checks DIRECT <= PROXY_ONLY <= PROXY_PDP on per-level medians, allowing
/// each left side to exceed the right by `slack` (0.05 = 5 %).
pub fn check_ordering(results: &[BenchResult], slack: f64) -> Vec<OrderingViolation> {
    let find = |id| results.iter().find(|r| r.scenario == id);
    let mut violations = Vec::new();
    for pair in ScenarioId::ALL.windows(2) {
        let (Some(lo), Some(hi)) = (find(pair[0]), find(pair[1])) else { continue };
        for level in &lo.levels {
            let (Some(a), Some(b)) = (level.stats, hi.level(level.concurrency).and_then(|l| l.stats)) else {
                continue;
            };
            if a.median_ms > b.median_ms * (1.0 + slack) {
                violations.push(OrderingViolation {
                    concurrency: level.concurrency,
                    faster: pair[0],
                    faster_median_ms: a.median_ms,
                    slower: pair[1],
                    slower_median_ms: b.median_ms,
                });
            }
        }
    }
    violations
}

/// Times `n` sequential `POST /v1/decide` calls. With `cache` on, one
/// unmeasured call primes the decision cache first.
pub async fn measure_decision_latency(
    pdp_url: &str,
    request: &AuthzRequest,
    n: usize,
    cache: bool,
) -> Result<LatencyStats, BenchError> {
    if n < MIN_DECISION_SAMPLES {
        return Err(BenchError::TooFewSamples { got: n, min: MIN_DECISION_SAMPLES });
    }
    let http = client(1);
    let url = format!("{}/v1/decide", pdp_url.trim_end_matches('/'));
    let call = || {
        let mut req = http.post(&url).json(request);
        if !cache {
            req = req.header(reqwest::header::CACHE_CONTROL, "no-cache");
        }
        async move {
            let resp = req.send().await.map_err(|e| BenchError::Request(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(BenchError::Request(format!("decide returned {}", resp.status())));
            }
            resp.bytes().await.map_err(|e| BenchError::Request(e.to_string()))?;
            Ok(())
        }
    };
    if cache {
        call().await?;
    }
    let mut latencies = Vec::with_capacity(n);
    for _ in 0..n {
        let t = Instant::now();
        call().await?;
        latencies.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(&latencies).expect("n >= 30"))
}

/// Workload the local stack's policy admits to the bench target.
pub const BENCH_WORKLOAD: &str = "bench-client";
pub const BENCH_RESOURCE: &str = "bench/payload[personal].bin";
const BENCH_POLICY: &str = "flow personal allow=bench-client\n";
const PAYLOAD_BYTES: usize = 4096;

/// Store, decision point and two proxies (one enforcing, one pass-through)
/// on loopback ports. The services get their own runtime on a dedicated
/// thread, so they never share scheduler workers with the load generator.
#[derive(Debug)]
pub struct LocalStack {
    pub store: Arc<ObjectStore>,
    pub store_url: String,
    pub pdp_url: String,
    /// Proxy with authorization disabled.
    pub proxy_url: String,
    /// Proxy consulting the decision point.
    pub pep_url: String,
    shutdown: oneshot::Sender<()>,
    thread: std::thread::JoinHandle<()>,
}

struct Urls {
    store: String,
    pdp: String,
    proxy: String,
    pep: String,
}

async fn bind() -> io::Result<(TcpListener, String)> {
    let listener = TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, 0))).await?;
    let url = format!("http://{}", listener.local_addr()?);
    Ok((listener, url))
}

async fn run_stack(
    store: Arc<ObjectStore>,
    caches: StackCaches,
    ready: oneshot::Sender<io::Result<Urls>>,
    shutdown: oneshot::Receiver<()>,
) {
    let started = async {
        let policy = parse_policy(BENCH_POLICY).map_err(io::Error::other)?;
        let (store_l, store_url) = bind().await?;
        let (pdp_l, pdp_url) = bind().await?;
        let (proxy_l, proxy_url) = bind().await?;
        let (pep_l, pep_url) = bind().await?;
        let cache = |ttl| DecisionCache::new(ttl, DEFAULT_CAPACITY);
        let introspector = Arc::new(HttpIntrospector::new(&store_url));
        let pdp = Arc::new(Pdp::new(policy, introspector).with_cache(cache(caches.pdp_ttl)));
        let plain = Arc::new(Pep::new(&store_url, Authorizer::Disabled).with_cache(DecisionCache::disabled()));
        let pdp_client = PdpClient::new(&pdp_url);
        let full = Arc::new(Pep::new(&store_url, Authorizer::Remote(pdp_client)).with_cache(cache(caches.pep_ttl)));
        let urls = Urls { store: store_url, pdp: pdp_url, proxy: proxy_url, pep: pep_url };
        Ok::<_, io::Error>((urls, store_l, pdp_l, proxy_l, pep_l, pdp, plain, full))
    };
    let (urls, store_l, pdp_l, proxy_l, pep_l, pdp, plain, full) = match started.await {
        Ok(parts) => parts,
        Err(e) => {
            let _ = ready.send(Err(e));
            return;
        }
    };
    let (stop_tx, _) = tokio::sync::broadcast::channel::<()>(1);
    let stop = || {
        let mut rx = stop_tx.subscribe();
        async move {
            let _ = rx.recv().await;
        }
    };
    let tasks = [
        tokio::spawn(store::serve(store, store_l, stop())),
        tokio::spawn(server::serve_pdp(pdp, pdp_l, stop())),
        tokio::spawn(server::serve_pep(plain, proxy_l, stop())),
        tokio::spawn(server::serve_pep(full, pep_l, stop())),
    ];
    let _ = ready.send(Ok(urls));
    let _ = shutdown.await;
    let _ = stop_tx.send(());
    for t in tasks {
        if let Ok(Err(e)) = t.await {
            tracing::warn!(error = %e, "bench service failed");
        }
    }
}

/// Decision cache TTLs of the local stack; zero disables a cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackCaches {
    pub pdp_ttl: Duration,
    pub pep_ttl: Duration,
}

impl Default for StackCaches {
    /// The decision point caches; the enforcing proxy asks it on every
    /// request. A proxy-side cache hit would skip the decision point and
    /// make the full path indistinguishable from the bare proxy.
    fn default() -> Self {
        StackCaches { pdp_ttl: DEFAULT_TTL, pep_ttl: Duration::ZERO }
    }
}

impl LocalStack {
    pub async fn start(caches: StackCaches) -> io::Result<Self> {
        let store = Arc::new(ObjectStore::new(StoreConfig { start: Timestamp(1_700_000_000), ..StoreConfig::default() }));
        let (bucket, key) = BENCH_RESOURCE.split_once('/').expect("constant resource");
        store
            .create_bucket(bucket, Region::new("eu-west-1").expect("valid region"))
            .and_then(|_| store.put_object(bucket, key, Bytes::from(vec![0x5a; PAYLOAD_BYTES])))
            .map_err(io::Error::other)?;

        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(workers)
            .thread_name("bench-stack")
            .enable_all()
            .build()?;
        let (ready_tx, ready_rx) = oneshot::channel();
        let (shutdown, shutdown_rx) = oneshot::channel();
        let served = store.clone();
        let thread = std::thread::Builder::new().name("bench-stack".into()).spawn(move || {
            runtime.block_on(run_stack(served, caches, ready_tx, shutdown_rx));
        })?;
        let urls = ready_rx.await.map_err(|_| io::Error::other("bench stack exited during startup"))??;
        Ok(LocalStack {
            store,
            store_url: urls.store,
            pdp_url: urls.pdp,
            proxy_url: urls.proxy,
            pep_url: urls.pep,
            shutdown,
            thread,
        })
    }

    pub fn target(&self, id: ScenarioId) -> BenchTarget {
        let base_url = match id {
            ScenarioId::Direct => &self.store_url,
            ScenarioId::ProxyOnly => &self.proxy_url,
            ScenarioId::ProxyPdp => &self.pep_url,
        };
        BenchTarget { base_url: base_url.clone(), resource: BENCH_RESOURCE.into(), workload: BENCH_WORKLOAD.into() }
    }

    pub fn decision_request(&self) -> AuthzRequest {
        AuthzRequest::new(BENCH_WORKLOAD, BENCH_RESOURCE, "GET")
    }

    /// Shuts the services down and waits for their thread.
    pub async fn stop(self) {
        let _ = self.shutdown.send(());
        let thread = self.thread;
        let _ = tokio::task::spawn_blocking(move || thread.join()).await;
    }
}
