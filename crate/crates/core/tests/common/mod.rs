//! Shared helpers for the integration tests: loopback servers, a recording
//! TCP relay, random store generation and brute-force checkers that
//! recompute tracker findings by plain enumeration.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::future::Future;
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use labelmesh::enforcement::{server, Pdp, Pep};
use labelmesh::model::{CheckId, Finding, Label, Region, RegionGroup, ReplicaStatus, Timestamp};
use labelmesh::policy::{FlowRule, GeoRule, LifecycleRule, TrackingPolicy};
use labelmesh::store::{self, ObjectInfo, ObjectStore, StoreConfig};
use labelmesh::title::extract_labels;
use labelmesh::tracker::{discover, FirstSeenJournal, Snapshot};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;

pub const DAY: i64 = 86_400;

/// A server task on a loopback port; stops when dropped.
pub struct Server {
    pub url: String,
    _stop: oneshot::Sender<()>,
}

async fn spawn_with<F, Fut>(run: F) -> Server
where
    F: FnOnce(TcpListener, oneshot::Receiver<()>) -> Fut,
    Fut: Future<Output = std::io::Result<()>> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = oneshot::channel();
    tokio::spawn(run(listener, rx));
    Server { url, _stop: stop }
}

fn until(rx: oneshot::Receiver<()>) -> impl Future<Output = ()> + Send + 'static {
    async move {
        let _ = rx.await;
    }
}

pub async fn spawn_store(store: Arc<ObjectStore>) -> Server {
    spawn_with(|l, rx| store::serve(store, l, until(rx))).await
}

pub async fn spawn_pdp(pdp: Arc<Pdp>) -> Server {
    spawn_with(|l, rx| server::serve_pdp(pdp, l, until(rx))).await
}

pub async fn spawn_pep(pep: Arc<Pep>) -> Server {
    spawn_with(|l, rx| server::serve_pep(pep, l, until(rx))).await
}

/// A loopback URL nothing listens on.
pub async fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", l.local_addr().unwrap());
    drop(l);
    url
}

pub fn fresh_store(start: i64) -> Arc<ObjectStore> {
    Arc::new(ObjectStore::new(StoreConfig { start: Timestamp(start), ..StoreConfig::default() }))
}

pub fn region(id: &str) -> Region {
    Region::new(id).unwrap()
}

pub fn label(name: &str) -> Label {
    Label::new(name).unwrap()
}

pub fn body(s: &str) -> Bytes {
    Bytes::copy_from_slice(s.as_bytes())
}

/// TCP relay in front of `upstream` that keeps a copy of every byte the
/// upstream sends back.
pub struct Tap {
    pub url: String,
    pub downstream: Arc<Mutex<Vec<u8>>>,
}

impl Tap {
    pub fn captured(&self) -> String {
        String::from_utf8_lossy(&self.downstream.lock().unwrap()).into_owned()
    }
}

pub async fn spawn_tap(upstream: &str) -> Tap {
    let target = upstream.trim_start_matches("http://").to_string();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let downstream = Arc::new(Mutex::new(Vec::new()));
    let sink = downstream.clone();
    tokio::spawn(async move {
        while let Ok((client, _)) = listener.accept().await {
            let Ok(server) = TcpStream::connect(&target).await else { continue };
            let sink = sink.clone();
            tokio::spawn(async move {
                let (mut cr, mut cw) = client.into_split();
                let (mut sr, mut sw) = server.into_split();
                let up = async {
                    let _ = tokio::io::copy(&mut cr, &mut sw).await;
                    let _ = sw.shutdown().await;
                };
                let down = async {
                    let mut buf = [0u8; 8192];
                    loop {
                        match sr.read(&mut buf).await {
                            Ok(0) | Err(_) => break,
                            Ok(n) => {
                                sink.lock().unwrap().extend_from_slice(&buf[..n]);
                                if cw.write_all(&buf[..n]).await.is_err() {
                                    break;
                                }
                            }
                        }
                    }
                    let _ = cw.shutdown().await;
                };
                tokio::join!(up, down);
            });
        }
    });
    Tap { url, downstream }
}

// ---------------------------------------------------------------------------
// Random stores

const REGIONS: [&str; 6] = ["eu-west-1", "eu-central-1", "eu-north-1", "us-east-1", "us-west-2", "ap-south-1"];
const DIRS: [&str; 4] = ["", "cv/", "pub/", "cv/old/"];
const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
const LABEL_SETS: [&str; 6] = ["", "[personal]", "[invoice]", "[personal][invoice]", "[public]", "[invoice][personal]"];
const PREFIXES: [&str; 4] = ["", "cv/", "pub/", "cv/old/"];
pub const POLICY_LABELS: [&str; 3] = ["personal", "invoice", "public"];
pub const MAX_BUCKETS: usize = 10;
pub const MAX_OBJECTS: usize = 50;
pub const MAX_RULES: usize = 5;

fn random_key(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}{}{}.pdf",
        DIRS.choose(rng).unwrap(),
        NAMES.choose(rng).unwrap(),
        LABEL_SETS.choose(rng).unwrap()
    )
}

fn object_total(store: &ObjectStore) -> usize {
    store.list_buckets().iter().map(|b| b.object_count).sum()
}

fn rule_total(store: &ObjectStore) -> usize {
    store.list_buckets().iter().map(|b| b.rules.len()).sum()
}

/// A generated store plus the journal of an audit taken part way through
/// its history.
pub struct Generated {
    pub store: ObjectStore,
    pub journal: FirstSeenJournal,
}

/// Builds a store by replaying a random sequence of bucket creations,
/// rules, uploads, renames, deletions and clock jumps, keeping within
/// 10 buckets, 50 objects and 5 rules.
pub async fn random_store(rng: &mut ChaCha8Rng, expose_created_at: bool) -> Generated {
    let store = ObjectStore::new(StoreConfig {
        start: Timestamp(1_600_000_000),
        expose_created_at,
        ..StoreConfig::default()
    });
    let mut journal = FirstSeenJournal::new();
    let n_buckets = rng.random_range(1..=MAX_BUCKETS);
    let names: Vec<String> = (0..n_buckets).map(|i| format!("b{i}")).collect();
    for n in &names {
        store.create_bucket(n, region(REGIONS.choose(rng).unwrap())).unwrap();
    }
    let steps = rng.random_range(10..80);
    let observe_at = rng.random_range(0..steps);
    for step in 0..steps {
        if step == observe_at {
            journal.observe(&discover(&store).await.unwrap());
        }
        let live: Vec<String> = store.list_buckets().into_iter().map(|b| b.name).collect();
        if live.is_empty() {
            break;
        }
        let bucket = live.choose(rng).unwrap().clone();
        match rng.random_range(0..100) {
            0..=11 => {
                if rule_total(&store) < MAX_RULES {
                    let dest = live.choose(rng).unwrap();
                    // Errors (self-replication, duplicate rule) are part of the sequence.
                    let _ = store.add_replication_rule(&bucket, dest, PREFIXES.choose(rng).unwrap());
                }
            }
            12..=59 => {
                let fanout = store.list_buckets().iter().find(|b| b.name == bucket).map_or(0, |b| b.rules.len());
                if object_total(&store) + 1 + fanout <= MAX_OBJECTS {
                    let key = random_key(rng);
                    store.put_object(&bucket, &key, Bytes::from(key.clone())).unwrap();
                }
            }
            60..=71 => {
                let objects = store.list_objects(&bucket).unwrap();
                if let Some(o) = objects.choose(rng) {
                    store.delete_object(&bucket, o.key.as_str()).unwrap();
                }
            }
            72..=77 => {
                let objects = store.list_objects(&bucket).unwrap();
                if let Some(o) = objects.choose(rng) {
                    let (bare, _) = extract_labels(o.key.as_str()).unwrap();
                    let stem = bare.trim_end_matches(".pdf");
                    let to = format!("{stem}{}.pdf", LABEL_SETS.choose(rng).unwrap());
                    let _ = store.rename_object(&bucket, o.key.as_str(), &to);
                }
            }
            78..=80 => {
                if live.len() > 1 {
                    store.delete_bucket(&bucket).unwrap();
                }
            }
            _ => {
                store.advance_clock(rng.random_range(0..120) * DAY + rng.random_range(0..DAY)).unwrap();
            }
        }
    }
    store.advance_clock(rng.random_range(0..400) * DAY).unwrap();
    Generated { store, journal }
}

pub fn random_policy(rng: &mut ChaCha8Rng) -> TrackingPolicy {
    let mut policy = TrackingPolicy::default();
    for name in POLICY_LABELS {
        if rng.random_bool(0.7) {
            let delete_after = [None, Some(30), Some(90), Some(180), Some(365)].choose(rng).unwrap().map(|d: u64| d * DAY as u64);
            let cap = delete_after.unwrap_or(u64::MAX);
            let retain_min = [None, Some(0), Some(30 * DAY as u64), Some(180 * DAY as u64)]
                .into_iter()
                .filter(|r| r.is_none_or(|v| v <= cap))
                .collect::<Vec<_>>()
                .choose(rng)
                .copied()
                .flatten();
            if delete_after.is_some() || retain_min.is_some() {
                policy.lifecycle_rules.push(LifecycleRule { label: label(name), retain_min, delete_after });
            }
        }
        if rng.random_bool(0.5) {
            let workloads = ["hr-service", "billing-service", "audit"];
            let n = rng.random_range(1..=workloads.len());
            let allowed = workloads.choose_multiple(rng, n).map(|w| w.to_string()).collect();
            policy.flow_rules.push(FlowRule { label: label(name), allowed_workloads: allowed });
        }
        if rng.random_bool(0.6) {
            let groups = ["EU", "US", "AP"];
            let n = rng.random_range(1..=groups.len());
            let allowed = groups.choose_multiple(rng, n).map(|g| RegionGroup::new(g).unwrap()).collect();
            policy.geo_rules.push(GeoRule { label: label(name), allowed_groups: allowed });
        }
    }
    policy
}

// ---------------------------------------------------------------------------
// Brute-force checkers. Findings are compared as sorted
// (check, bucket, key) triples; detail text is free-form.

pub type FindingId = (CheckId, String, Option<String>);

pub fn ids(findings: &[Finding]) -> Vec<FindingId> {
    let mut v: Vec<FindingId> = findings
        .iter()
        .map(|f| (f.check_id, f.bucket.clone(), f.key.as_ref().map(|k| k.to_string())))
        .collect();
    v.sort();
    v
}

fn group_of(region: &Region) -> String {
    region.as_str()[..2].to_ascii_uppercase()
}

/// Objects `s` such that some bucket has a rule into `o`'s bucket covering
/// `o`'s key and holds `s` under that same key.
fn sources_of<'a>(snap: &'a Snapshot, o: &ObjectInfo) -> Vec<&'a ObjectInfo> {
    let mut out: Vec<&ObjectInfo> = Vec::new();
    for b in &snap.buckets {
        for r in &b.rules {
            if r.destination_bucket != o.bucket || !o.key.as_str().starts_with(r.key_prefix.as_str()) {
                continue;
            }
            for s in &snap.objects {
                if s.bucket == b.name && s.key == o.key && !out.iter().any(|x| std::ptr::eq(*x, s)) {
                    out.push(s);
                }
            }
        }
    }
    out
}

pub fn oracle_replication(snap: &Snapshot) -> Vec<FindingId> {
    let mut out = Vec::new();
    for b in &snap.buckets {
        let holds_replica = snap
            .objects
            .iter()
            .any(|o| o.bucket == b.name && o.replica_status == ReplicaStatus::Replica);
        let pointed_at = snap
            .buckets
            .iter()
            .any(|s| s.rules.iter().any(|r| r.destination_bucket == b.name));
        if holds_replica && !pointed_at {
            out.push((CheckId::OrphanBucket, b.name.clone(), None));
        }
    }
    for o in &snap.objects {
        if o.replica_status == ReplicaStatus::Replica && sources_of(snap, o).is_empty() {
            out.push((CheckId::OrphanObject, o.bucket.clone(), Some(o.key.to_string())));
        }
    }
    out.sort();
    out
}

pub fn oracle_geolocation(snap: &Snapshot, policy: &TrackingPolicy) -> Vec<FindingId> {
    let mut out = Vec::new();
    for s in &snap.buckets {
        for r in &s.rules {
            for d in &snap.buckets {
                if d.name == r.destination_bucket && group_of(&d.region) != group_of(&s.region) {
                    out.push((CheckId::GeoViolation, s.name.clone(), None));
                }
            }
        }
    }
    for g in &policy.geo_rules {
        for b in &snap.buckets {
            let holds = snap.objects.iter().any(|o| o.bucket == b.name && o.labels.contains(&g.label));
            let allowed = g.allowed_groups.iter().any(|a| a.as_str() == group_of(&b.region));
            if holds && !allowed {
                out.push((CheckId::GeoViolation, b.name.clone(), None));
            }
        }
    }
    out.sort();
    out
}

pub fn oracle_retention(snap: &Snapshot, policy: &TrackingPolicy, journal: &FirstSeenJournal) -> Vec<FindingId> {
    let now = snap.taken_at.0;
    let birth = |o: &ObjectInfo| -> i64 {
        o.created_at
            .map(|t| t.0)
            .or_else(|| journal.iter().find(|(b, k, _)| *b == o.bucket && *k == o.key.as_str()).map(|(_, _, t)| t.0))
            .unwrap_or(now)
    };
    let mut out = Vec::new();
    for o in &snap.objects {
        let own = birth(o);
        let effective = if o.replica_status == ReplicaStatus::Replica {
            sources_of(snap, o).into_iter().map(birth).min().unwrap_or(own)
        } else {
            own
        };
        for l in o.labels.iter() {
            for r in &policy.lifecycle_rules {
                if &r.label == l && r.delete_after.is_some_and(|d| now - effective > d as i64) {
                    out.push((CheckId::RetentionExpired, o.bucket.clone(), Some(o.key.to_string())));
                }
            }
        }
    }
    for (bucket, key, seen) in journal.iter() {
        let (bare, labels) = extract_labels(key).unwrap();
        let still_there = snap
            .objects
            .iter()
            .any(|o| o.bucket == bucket && extract_labels(o.key.as_str()).unwrap().0 == bare);
        if still_there {
            continue;
        }
        for l in labels.iter() {
            for r in &policy.lifecycle_rules {
                if &r.label == l && r.retain_min.is_some_and(|m| now - seen.0 < m as i64) {
                    out.push((CheckId::RetentionAtRisk, bucket.to_string(), Some(key.to_string())));
                }
            }
        }
    }
    out.sort();
    out
}

/// Distinct bucket names among findings of `check`.
pub fn buckets_with(findings: &[Finding], check: CheckId) -> BTreeSet<String> {
    findings.iter().filter(|f| f.check_id == check).map(|f| f.bucket.clone()).collect()
}
