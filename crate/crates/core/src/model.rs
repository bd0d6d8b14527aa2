//! Shared domain vocabulary: labels, regions, object and bucket records,
//! audit findings and authorization decisions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while validating domain values.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid label {0:?}: labels must match [A-Za-z0-9_-]+")]
    InvalidLabel(String),
    #[error("invalid region {0:?}: expected at least two leading letters")]
    InvalidRegion(String),
    #[error("invalid region group {0:?}: expected two letters")]
    InvalidRegionGroup(String),
    #[error("invalid object key {0:?}")]
    InvalidKey(String),
    #[error("invalid resource {0:?}: expected <bucket>/<key>")]
    InvalidResource(String),
}

/// Seconds since the Unix epoch, UTC.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn plus(self, secs: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(secs as i64))
    }

    /// Seconds elapsed from `earlier` to `self`; negative if `earlier` lies in the future.
    pub fn since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub(crate) fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// A custom-defined classification token such as `personal` or `invoice`.
///
/// Labels are case-sensitive and restricted to `[A-Za-z0-9_-]+` so they can be
/// embedded in object titles and carried in comma-separated headers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() || !name.chars().all(is_label_char) {
            return Err(ModelError::InvalidLabel(name));
        }
        Ok(Label(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Label {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Label::new(value)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0
    }
}

impl FromStr for Label {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::new(s)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Insertion-ordered set of labels without duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Label>", into = "Vec<Label>")]
pub struct LabelSet(Vec<Label>);

impl LabelSet {
    pub fn new() -> Self {
        LabelSet(Vec::new())
    }

    /// Adds `label` unless already present. Returns whether it was added.
    pub fn insert(&mut self, label: Label) -> bool {
        if self.0.contains(&label) {
            false
        } else {
            self.0.push(label);
            true
        }
    }

    pub fn extend<I: IntoIterator<Item = Label>>(&mut self, labels: I) {
        for l in labels {
            self.insert(l);
        }
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.0.contains(label)
    }

    pub fn contains_str(&self, name: &str) -> bool {
        self.0.iter().any(|l| l.as_str() == name)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Label> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Same members regardless of order.
    pub fn same_members(&self, other: &LabelSet) -> bool {
        self.len() == other.len() && self.0.iter().all(|l| other.contains(l))
    }

    /// Comma-separated form used by the `X-Data-Labels` header.
    pub fn to_header_value(&self) -> String {
        self.0.iter().map(Label::as_str).collect::<Vec<_>>().join(",")
    }

    pub fn from_header_value(value: &str) -> Result<Self, ModelError> {
        let mut set = LabelSet::new();
        for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            set.insert(Label::new(part)?);
        }
        Ok(set)
    }
}

impl From<Vec<Label>> for LabelSet {
    fn from(v: Vec<Label>) -> Self {
        let mut set = LabelSet::new();
        set.extend(v);
        set
    }
}

impl From<LabelSet> for Vec<Label> {
    fn from(s: LabelSet) -> Self {
        s.0
    }
}

impl FromIterator<Label> for LabelSet {
    fn from_iter<T: IntoIterator<Item = Label>>(iter: T) -> Self {
        let mut set = LabelSet::new();
        set.extend(iter);
        set
    }
}

impl<'a> IntoIterator for &'a LabelSet {
    type Item = &'a Label;
    type IntoIter = std::slice::Iter<'a, Label>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.to_header_value())
    }
}

/// Two-letter region group code, e.g. `EU` or `US`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RegionGroup(String);

impl RegionGroup {
    pub fn new(code: &str) -> Result<Self, ModelError> {
        if code.len() != 2 || !code.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(ModelError::InvalidRegionGroup(code.to_string()));
        }
        Ok(RegionGroup(code.to_ascii_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RegionGroup {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        RegionGroup::new(&value)
    }
}

impl From<RegionGroup> for String {
    fn from(g: RegionGroup) -> String {
        g.0
    }
}

impl fmt::Display for RegionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Cloud region identifier such as `eu-west-1`, stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Region(String);

impl Region {
    pub fn new(id: &str) -> Result<Self, ModelError> {
        let lower = id.to_ascii_lowercase();
        let mut chars = lower.chars();
        let valid_prefix = matches!(
            (chars.next(), chars.next()),
            (Some(a), Some(b)) if a.is_ascii_alphabetic() && b.is_ascii_alphabetic()
        );
        if !valid_prefix || lower.chars().any(|c| c.is_whitespace() || c == '/') {
            return Err(ModelError::InvalidRegion(id.to_string()));
        }
        Ok(Region(lower))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn group(&self) -> RegionGroup {
        RegionGroup(self.0[..2].to_ascii_uppercase())
    }
}

/// Region group of a raw region id: the first two letters, uppercased.
pub fn region_group(region: &str) -> Result<RegionGroup, ModelError> {
    Region::new(region).map(|r| r.group())
}

impl TryFrom<String> for Region {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Region::new(&value)
    }
}

impl From<Region> for String {
    fn from(r: Region) -> String {
        r.0
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Object path within a bucket. May contain `/`; never empty and never
/// contains control characters (the journal format is tab/newline separated).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectKey(String);

impl ObjectKey {
    pub fn new(path: impl Into<String>) -> Result<Self, ModelError> {
        let path = path.into();
        if path.is_empty() || path.chars().any(char::is_control) {
            return Err(ModelError::InvalidKey(path));
        }
        Ok(ObjectKey(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ObjectKey {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        ObjectKey::new(value)
    }
}

impl From<ObjectKey> for String {
    fn from(k: ObjectKey) -> String {
        k.0
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A `bucket/key` reference as used by the introspection and decision APIs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceRef {
    pub bucket: String,
    pub key: ObjectKey,
}

impl ResourceRef {
    pub fn parse(resource: &str) -> Result<Self, ModelError> {
        let resource = resource.strip_prefix('/').unwrap_or(resource);
        match resource.split_once('/') {
            Some((bucket, key)) if !bucket.is_empty() && !key.is_empty() => Ok(ResourceRef {
                bucket: bucket.to_string(),
                key: ObjectKey::new(key)
                    .map_err(|_| ModelError::InvalidResource(resource.to_string()))?,
            }),
            _ => Err(ModelError::InvalidResource(resource.to_string())),
        }
    }
}

impl fmt::Display for ResourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.bucket, self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplicaStatus {
    Source,
    Replica,
}

/// One stored data object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRecord {
    pub key: ObjectKey,
    pub bucket: String,
    pub content: bytes::Bytes,
    pub replica_status: ReplicaStatus,
    pub last_modified: Timestamp,
    pub created_at: Timestamp,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicationRule {
    pub source_bucket: String,
    pub destination_bucket: String,
    #[serde(default)]
    pub key_prefix: String,
}

impl ReplicationRule {
    pub fn covers(&self, key: &ObjectKey) -> bool {
        key.as_str().starts_with(&self.key_prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketRecord {
    pub name: String,
    pub region: Region,
    pub replication_rules: Vec<ReplicationRule>,
    pub objects: BTreeMap<ObjectKey, ObjectRecord>,
}

impl BucketRecord {
    pub fn new(name: impl Into<String>, region: Region) -> Self {
        BucketRecord {
            name: name.into(),
            region,
            replication_rules: Vec::new(),
            objects: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckId {
    OrphanBucket,
    OrphanObject,
    GeoViolation,
    RetentionExpired,
    RetentionAtRisk,
}

impl CheckId {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckId::OrphanBucket => "ORPHAN_BUCKET",
            CheckId::OrphanObject => "ORPHAN_OBJECT",
            CheckId::GeoViolation => "GEO_VIOLATION",
            CheckId::RetentionExpired => "RETENTION_EXPIRED",
            CheckId::RetentionAtRisk => "RETENTION_AT_RISK",
        }
    }

    /// Whether findings of this kind are reported per object rather than per bucket.
    pub fn is_object_level(self) -> bool {
        !matches!(self, CheckId::OrphanBucket | CheckId::GeoViolation)
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A violation reported by the tracker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub check_id: CheckId,
    pub bucket: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub key: Option<ObjectKey>,
    pub detail: String,
    pub observed_at: Timestamp,
}

impl Finding {
    pub fn bucket_level(
        check_id: CheckId,
        bucket: impl Into<String>,
        detail: impl Into<String>,
        observed_at: Timestamp,
    ) -> Self {
        debug_assert!(!check_id.is_object_level());
        Finding {
            check_id,
            bucket: bucket.into(),
            key: None,
            detail: detail.into(),
            observed_at,
        }
    }

    pub fn object_level(
        check_id: CheckId,
        bucket: impl Into<String>,
        key: ObjectKey,
        detail: impl Into<String>,
        observed_at: Timestamp,
    ) -> Self {
        debug_assert!(check_id.is_object_level());
        Finding {
            check_id,
            bucket: bucket.into(),
            key: Some(key),
            detail: detail.into(),
            observed_at,
        }
    }

    pub(crate) fn sort_key(&self) -> (CheckId, &str, Option<&str>, &str) {
        (
            self.check_id,
            self.bucket.as_str(),
            self.key.as_ref().map(ObjectKey::as_str),
            self.detail.as_str(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Allow,
    Deny,
}

/// A PDP verdict together with the labels it was based on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub reason: String,
    #[serde(rename = "labels")]
    pub labels_seen: LabelSet,
    #[serde(default)]
    pub workload: String,
    /// Labels whose flow rule excluded the workload; non-empty only for label denials.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub denied_by: Vec<Label>,
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}
