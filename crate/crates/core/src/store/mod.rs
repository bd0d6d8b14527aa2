//! In-memory multi-region object store.
//!
//! Stands in for S3-style storage: buckets live in regions, carry outbound
//! replication rules, and replicate new uploads one level deep. Deleting a
//! source never cascades to replicas, and deleting a bucket drops its
//! outbound rules, so orphaned replicas can be produced on purpose.

mod client;
mod http;

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{HttpStoreClient, StoreClient};
pub use http::{router, serve, LABELS_HEADER};

use crate::model::{
    BucketRecord, LabelSet, ObjectKey, ObjectRecord, Region, RegionGroup, ReplicaStatus,
    ReplicationRule, ResourceRef, Timestamp,
};
use crate::title::extract_labels;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("no such bucket: {0}")]
    NoSuchBucket(String),
    #[error("no such object: {0}")]
    NoSuchObject(String),
    #[error("bucket already exists: {0}")]
    BucketExists(String),
    #[error("object already exists: {0}")]
    ObjectExists(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("store unreachable: {0}")]
    Unreachable(String),
    #[error("unexpected store response: {0}")]
    Protocol(String),
}

impl StoreError {
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            StoreError::NoSuchBucket(_) => "no_such_bucket",
            StoreError::NoSuchObject(_) => "no_such_object",
            StoreError::BucketExists(_) => "bucket_exists",
            StoreError::ObjectExists(_) => "object_exists",
            StoreError::Invalid(_) => "invalid",
            StoreError::Forbidden(_) => "forbidden",
            StoreError::Unreachable(_) => "unreachable",
            StoreError::Protocol(_) => "protocol",
        }
    }

    pub(crate) fn subject(&self) -> &str {
        match self {
            StoreError::NoSuchBucket(s)
            | StoreError::NoSuchObject(s)
            | StoreError::BucketExists(s)
            | StoreError::ObjectExists(s)
            | StoreError::Invalid(s)
            | StoreError::Forbidden(s)
            | StoreError::Unreachable(s)
            | StoreError::Protocol(s) => s,
        }
    }

    pub(crate) fn from_kind(kind: &str, subject: String) -> StoreError {
        match kind {
            "no_such_bucket" => StoreError::NoSuchBucket(subject),
            "no_such_object" => StoreError::NoSuchObject(subject),
            "bucket_exists" => StoreError::BucketExists(subject),
            "object_exists" => StoreError::ObjectExists(subject),
            "invalid" => StoreError::Invalid(subject),
            "forbidden" => StoreError::Forbidden(subject),
            _ => StoreError::Protocol(format!("{kind}: {subject}")),
        }
    }
}

/// Bucket metadata as returned by listings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketInfo {
    pub name: String,
    pub region: Region,
    pub region_group: RegionGroup,
    pub rules: Vec<ReplicationRule>,
    pub object_count: usize,
}

/// Object metadata as returned by listings; never includes content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub bucket: String,
    pub key: ObjectKey,
    pub replica_status: ReplicaStatus,
    pub last_modified: Timestamp,
    /// Absent when the store runs in creation-date-less mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<Timestamp>,
    pub labels: LabelSet,
    pub size: usize,
}

/// Who may call the introspection endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InspectAccess {
    Any,
    Only(Vec<IpAddr>),
}

impl InspectAccess {
    pub fn loopback() -> Self {
        InspectAccess::Only(vec![IpAddr::V4(Ipv4Addr::LOCALHOST), IpAddr::V6(Ipv6Addr::LOCALHOST)])
    }

    pub fn permits(&self, caller: IpAddr) -> bool {
        match self {
            InspectAccess::Any => true,
            InspectAccess::Only(ips) => ips.contains(&caller),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// Initial value of the logical clock.
    pub start: Timestamp,
    pub inspect_access: InspectAccess,
    /// When false, listings omit `created_at`, like real object stores.
    pub expose_created_at: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        StoreConfig {
            start: Timestamp(now),
            inspect_access: InspectAccess::loopback(),
            expose_created_at: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessEntry {
    pub method: String,
    pub path: String,
}

#[derive(Debug, Default)]
struct StoreState {
    buckets: BTreeMap<String, BucketRecord>,
    clock: Timestamp,
}

/// The simulated store. All mutations go through one writer lock.
#[derive(Debug)]
pub struct ObjectStore {
    state: RwLock<StoreState>,
    config: StoreConfig,
    access_log: Mutex<Vec<AccessEntry>>,
}

impl Default for ObjectStore {
    fn default() -> Self {
        ObjectStore::new(StoreConfig::default())
    }
}

fn labels_of(key: &ObjectKey) -> Result<LabelSet, StoreError> {
    extract_labels(key.as_str())
        .map(|(_, labels)| labels)
        .map_err(|e| StoreError::Invalid(e.to_string()))
}

fn parse_key(key: &str) -> Result<ObjectKey, StoreError> {
    ObjectKey::new(key).map_err(|e| StoreError::Invalid(e.to_string()))
}

impl ObjectStore {
    pub fn new(config: StoreConfig) -> Self {
        ObjectStore {
            state: RwLock::new(StoreState { buckets: BTreeMap::new(), clock: config.start }),
            config,
            access_log: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, StoreState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, StoreState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn now(&self) -> Timestamp {
        self.read().clock
    }

    pub fn advance_clock(&self, seconds: i64) -> Result<Timestamp, StoreError> {
        if seconds < 0 {
            return Err(StoreError::Invalid(format!("cannot move clock backwards by {seconds}s")));
        }
        let mut st = self.write();
        st.clock = st.clock.plus(seconds as u64);
        Ok(st.clock)
    }

    pub fn create_bucket(&self, name: &str, region: Region) -> Result<BucketInfo, StoreError> {
        if name.is_empty() || name.contains('/') || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(StoreError::Invalid(format!("invalid bucket name {name:?}")));
        }
        let mut st = self.write();
        if st.buckets.contains_key(name) {
            return Err(StoreError::BucketExists(name.to_string()));
        }
        let bucket = BucketRecord::new(name, region);
        let info = bucket_info(&bucket);
        st.buckets.insert(name.to_string(), bucket);
        Ok(info)
    }

    /// Removes the bucket, its objects and its outbound replication rules.
    /// Replicas already written elsewhere stay, and rules in other buckets
    /// that target this one are left dangling.
    pub fn delete_bucket(&self, name: &str) -> Result<(), StoreError> {
        self.write()
            .buckets
            .remove(name)
            .map(|_| ())
            .ok_or_else(|| StoreError::NoSuchBucket(name.to_string()))
    }

    pub fn add_replication_rule(
        &self,
        source: &str,
        destination: &str,
        prefix: &str,
    ) -> Result<ReplicationRule, StoreError> {
        if source == destination {
            return Err(StoreError::Invalid(format!("bucket {source} cannot replicate into itself")));
        }
        let mut st = self.write();
        if !st.buckets.contains_key(destination) {
            return Err(StoreError::NoSuchBucket(destination.to_string()));
        }
        let bucket = st
            .buckets
            .get_mut(source)
            .ok_or_else(|| StoreError::NoSuchBucket(source.to_string()))?;
        if bucket
            .replication_rules
            .iter()
            .any(|r| r.destination_bucket == destination && r.key_prefix == prefix)
        {
            return Err(StoreError::Invalid(format!(
                "rule {source} -> {destination} with prefix {prefix:?} already exists"
            )));
        }
        let rule = ReplicationRule {
            source_bucket: source.to_string(),
            destination_bucket: destination.to_string(),
            key_prefix: prefix.to_string(),
        };
        bucket.replication_rules.push(rule.clone());
        Ok(rule)
    }

    /// Stores an object and writes a REPLICA copy for every matching rule
    /// whose destination still exists.
    pub fn put_object(&self, bucket: &str, key: &str, content: Bytes) -> Result<ObjectInfo, StoreError> {
        let key = parse_key(key)?;
        let labels = labels_of(&key)?;
        let mut st = self.write();
        let now = st.clock;
        let source = st
            .buckets
            .get_mut(bucket)
            .ok_or_else(|| StoreError::NoSuchBucket(bucket.to_string()))?;
        let record = ObjectRecord {
            key: key.clone(),
            bucket: bucket.to_string(),
            content,
            replica_status: ReplicaStatus::Source,
            last_modified: now,
            created_at: now,
            labels,
        };
        let destinations: Vec<String> = source
            .replication_rules
            .iter()
            .filter(|r| r.covers(&key))
            .map(|r| r.destination_bucket.clone())
            .collect();
        source.objects.insert(key.clone(), record.clone());
        let info = self.object_info(&record);

        for dest in destinations {
            match st.buckets.get_mut(&dest) {
                Some(target) => {
                    let replica = ObjectRecord {
                        bucket: dest.clone(),
                        replica_status: ReplicaStatus::Replica,
                        ..record.clone()
                    };
                    target.objects.insert(key.clone(), replica);
                }
                None => {
                    tracing::warn!(source = bucket, destination = %dest, key = %key, "replication destination missing; skipped");
                }
            }
        }
        Ok(info)
    }

    pub fn get_object(&self, bucket: &str, key: &str) -> Result<ObjectRecord, StoreError> {
        let st = self.read();
        let b = st.buckets.get(bucket).ok_or_else(|| StoreError::NoSuchBucket(bucket.to_string()))?;
        b.objects
            .get(&parse_key(key)?)
            .cloned()
            .ok_or_else(|| StoreError::NoSuchObject(format!("{bucket}/{key}")))
    }

    /// Deletes exactly one copy; replicas elsewhere are untouched.
    pub fn delete_object(&self, bucket: &str, key: &str) -> Result<(), StoreError> {
        let key = parse_key(key)?;
        let mut st = self.write();
        let b = st
            .buckets
            .get_mut(bucket)
            .ok_or_else(|| StoreError::NoSuchBucket(bucket.to_string()))?;
        b.objects
            .remove(&key)
            .map(|_| ())
            .ok_or_else(|| StoreError::NoSuchObject(format!("{bucket}/{key}")))
    }

    /// Moves an object to a new key, keeping content, replica status and
    /// timestamps. Labels follow the new title. Does not replicate.
    pub fn rename_object(&self, bucket: &str, from: &str, to: &str) -> Result<ObjectInfo, StoreError> {
        let from = parse_key(from)?;
        let to = parse_key(to)?;
        let labels = labels_of(&to)?;
        let mut st = self.write();
        let b = st
            .buckets
            .get_mut(bucket)
            .ok_or_else(|| StoreError::NoSuchBucket(bucket.to_string()))?;
        if from == to {
            return b
                .objects
                .get(&from)
                .map(|r| self.object_info(r))
                .ok_or_else(|| StoreError::NoSuchObject(format!("{bucket}/{from}")));
        }
        if b.objects.contains_key(&to) {
            return Err(StoreError::ObjectExists(format!("{bucket}/{to}")));
        }
        let mut record = b
            .objects
            .remove(&from)
            .ok_or_else(|| StoreError::NoSuchObject(format!("{bucket}/{from}")))?;
        record.key = to.clone();
        record.labels = labels;
        let info = self.object_info(&record);
        b.objects.insert(to, record);
        Ok(info)
    }

    pub fn list_buckets(&self) -> Vec<BucketInfo> {
        self.read().buckets.values().map(bucket_info).collect()
    }

    pub fn list_objects(&self, bucket: &str) -> Result<Vec<ObjectInfo>, StoreError> {
        let st = self.read();
        let b = st.buckets.get(bucket).ok_or_else(|| StoreError::NoSuchBucket(bucket.to_string()))?;
        Ok(b.objects.values().map(|o| self.object_info(o)).collect())
    }

    /// Labels of `resource` (`bucket/key`), for callers on the allow-list only.
    pub fn inspect(&self, resource: &str, caller: IpAddr) -> Result<LabelSet, StoreError> {
        if !self.config.inspect_access.permits(caller) {
            return Err(StoreError::Forbidden(format!("introspection not permitted for {caller}")));
        }
        let r = ResourceRef::parse(resource).map_err(|_| StoreError::NoSuchObject(resource.to_string()))?;
        let st = self.read();
        st.buckets
            .get(&r.bucket)
            .and_then(|b| b.objects.get(&r.key))
            .map(|o| o.labels.clone())
            .ok_or_else(|| StoreError::NoSuchObject(resource.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.read().buckets.is_empty()
    }

    pub(crate) fn record_access(&self, method: &str, path: &str) {
        self.access_log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(AccessEntry { method: method.to_string(), path: path.to_string() });
    }

    /// HTTP requests served so far, in arrival order.
    pub fn access_log(&self) -> Vec<AccessEntry> {
        self.access_log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Number of logged requests with `method` whose path starts with `prefix`.
    pub fn access_count(&self, method: &str, prefix: &str) -> usize {
        self.access_log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|e| e.method == method && e.path.starts_with(prefix))
            .count()
    }

    fn object_info(&self, o: &ObjectRecord) -> ObjectInfo {
        ObjectInfo {
            bucket: o.bucket.clone(),
            key: o.key.clone(),
            replica_status: o.replica_status,
            last_modified: o.last_modified,
            created_at: self.config.expose_created_at.then_some(o.created_at),
            labels: o.labels.clone(),
            size: o.content.len(),
        }
    }
}

fn bucket_info(b: &BucketRecord) -> BucketInfo {
    BucketInfo {
        name: b.name.clone(),
        region: b.region.clone(),
        region_group: b.region.group(),
        rules: b.replication_rules.clone(),
        object_count: b.objects.len(),
    }
}
