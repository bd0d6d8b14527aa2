//! The tracker: discovery pulls metadata from a store, the validator checks
//! it against a tracking policy, and the report collects the findings.

mod checks;
mod journal;

use std::path::Path;

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checks::{check_geolocation, check_replication, check_retention, effective_birth};
pub use journal::{FirstSeenJournal, JournalError};

use crate::model::{Finding, Timestamp};
use crate::policy::TrackingPolicy;
use crate::store::{BucketInfo, ObjectInfo, StoreClient, StoreError};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("discovery failed: {0}")]
    Discovery(#[from] StoreError),
    #[error("listing of bucket {bucket} changed during discovery ({listed} listed, {expected} expected)")]
    PartialListing {
        bucket: String,
        listed: usize,
        expected: usize,
    },
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// Metadata of every bucket and object at one point in store time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub buckets: Vec<BucketInfo>,
    pub objects: Vec<ObjectInfo>,
    pub taken_at: Timestamp,
}

/// Lists all buckets and their objects. Any failed or inconsistent bucket
/// listing aborts the whole run: a partial view would report spurious orphans.
pub async fn discover<C: StoreClient + ?Sized>(store: &C) -> Result<Snapshot, TrackerError> {
    let taken_at = store.now().await?;
    let buckets = store.list_buckets().await?;
    let listings = try_join_all(buckets.iter().map(|b| store.list_objects(&b.name))).await?;
    let mut objects = Vec::new();
    for (bucket, listing) in buckets.iter().zip(listings) {
        if listing.len() != bucket.object_count || listing.iter().any(|o| o.bucket != bucket.name) {
            return Err(TrackerError::PartialListing {
                bucket: bucket.name.clone(),
                listed: listing.len(),
                expected: bucket.object_count,
            });
        }
        objects.extend(listing);
    }
    Ok(Snapshot { buckets, objects, taken_at })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<Finding>,
    pub scanned_buckets: usize,
    pub scanned_objects: usize,
    pub policy_hash: String,
    pub run_at: Timestamp,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Runs all checks over `snapshot`. `journal` is the state before this run.
pub fn validate(
    snapshot: &Snapshot,
    policy: &TrackingPolicy,
    journal: &FirstSeenJournal,
) -> Vec<Finding> {
    let mut findings = check_replication(snapshot);
    findings.extend(check_geolocation(snapshot, policy));
    findings.extend(check_retention(snapshot, policy, journal, snapshot.taken_at));
    checks::sort_findings(&mut findings);
    findings
}

/// Discovers, validates and advances `journal` to the new snapshot.
pub async fn run_audit<C: StoreClient + ?Sized>(
    store: &C,
    policy: &TrackingPolicy,
    journal: &mut FirstSeenJournal,
) -> Result<AuditReport, TrackerError> {
    let snapshot = discover(store).await?;
    let findings = validate(&snapshot, policy, journal);
    journal.observe(&snapshot);
    Ok(AuditReport {
        findings,
        scanned_buckets: snapshot.buckets.len(),
        scanned_objects: snapshot.objects.len(),
        policy_hash: policy.digest(),
        run_at: snapshot.taken_at,
    })
}

/// [`run_audit`] with the journal loaded from and saved back to `journal_path`.
/// The journal file is left untouched when the run fails.
pub async fn run_audit_with_journal<C: StoreClient + ?Sized>(
    store: &C,
    policy: &TrackingPolicy,
    journal_path: &Path,
) -> Result<AuditReport, TrackerError> {
    let mut journal = FirstSeenJournal::load(journal_path)?;
    let report = run_audit(store, policy, &mut journal).await?;
    journal.save(journal_path)?;
    Ok(report)
}
