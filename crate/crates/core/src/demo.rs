//! The CloudFlow demo: a job portal storing applicant CVs, invoices and a
//! public brochure, seeded so that an audit trips each replication and
//! retention check once.

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Region;
use crate::store::{StoreClient, StoreError};

pub const CLOUDFLOW_POLICY: &str = "\
# CloudFlow tracking policy
lifecycle personal delete_after=180d
lifecycle invoice  retain_min=180d delete_after=365d

flow personal allow=hr-service
flow invoice  allow=billing-service

geo personal groups=EU
";

pub const CLOUDFLOW_SCHEMA: &str = "\
# CloudFlow asset classification
values   { personal, invoice, public }
types    { Application, Billing, Marketing }
keywords { cv, invoice, brochure }

when cv       -> value personal type Application
when invoice  -> value invoice  type Billing
when brochure -> value public   type Marketing
";

/// Past the 180 day deletion deadline for personal data.
pub const EXPIRY_ADVANCE_SECS: i64 = 181 * 86_400;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("store is not empty ({0} buckets); seed a fresh store")]
    NotEmpty(usize),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub buckets: Vec<String>,
    pub uploads: Vec<String>,
    pub deleted_buckets: Vec<String>,
    pub clock_advanced_secs: i64,
}

fn pdf(name: &str) -> Bytes {
    Bytes::from(format!("%PDF-1.4\n% {name}\n%%EOF\n"))
}

fn region(id: &str) -> Region {
    Region::new(id).expect("fixture regions are valid")
}

/// Seeds an empty store:
///
/// * `cv-store` (eu-west-1) replicating `applications/` to `cv-backup`
///   (eu-central-1), `finance-store` (eu-west-1), `public-store` (us-east-1);
/// * one archived CV uploaded before the clock jumps 181 days, so it is
///   past its deletion deadline;
/// * fresh CVs (two replicated), an unlabeled CV, an invoice, the brochure;
/// * `old-intake` replicating into `old-backup`, then deleted, leaving an
///   orphaned bucket with an orphaned replica.
pub async fn seed_demo<C: StoreClient + ?Sized>(store: &C) -> Result<SeedSummary, DemoError> {
    let existing = store.list_buckets().await?;
    if !existing.is_empty() {
        return Err(DemoError::NotEmpty(existing.len()));
    }
    let mut summary = SeedSummary {
        buckets: Vec::new(),
        uploads: Vec::new(),
        deleted_buckets: Vec::new(),
        clock_advanced_secs: 0,
    };

    for (name, r) in [
        ("cv-store", "eu-west-1"),
        ("cv-backup", "eu-central-1"),
        ("finance-store", "eu-west-1"),
        ("public-store", "us-east-1"),
    ] {
        store.create_bucket(name, &region(r)).await?;
        summary.buckets.push(name.to_string());
    }
    store.add_replication_rule("cv-store", "cv-backup", "applications/").await?;

    let mut put = async |bucket: &str, key: &str| -> Result<(), StoreError> {
        store.put_object(bucket, key, pdf(key)).await?;
        summary.uploads.push(format!("{bucket}/{key}"));
        Ok(())
    };
    put("cv-store", "archive/doe_cv[personal].pdf").await?;
    store.advance_clock(EXPIRY_ADVANCE_SECS).await?;

    put("cv-store", "applications/smith_cv[personal].pdf").await?;
    put("cv-store", "applications/jones_cv[personal].pdf").await?;
    put("cv-store", "inbox/miller_cv.pdf").await?;
    put("finance-store", "invoices/q3_invoice[invoice].pdf").await?;
    put("public-store", "brochure[public].pdf").await?;

    store.create_bucket("old-intake", &region("eu-west-3")).await?;
    store.create_bucket("old-backup", &region("eu-north-1")).await?;
    store.add_replication_rule("old-intake", "old-backup", "").await?;
    put("old-intake", "applications/lee_cv[personal].pdf").await?;
    store.delete_bucket("old-intake").await?;

    summary.buckets.extend(["old-intake".to_string(), "old-backup".to_string()]);
    summary.deleted_buckets.push("old-intake".to_string());
    summary.clock_advanced_secs = EXPIRY_ADVANCE_SECS;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_schema;
    use crate::model::CheckId;
    use crate::policy::parse_policy;
    use crate::store::{ObjectStore, StoreConfig};
    use crate::tracker::{run_audit, FirstSeenJournal};

    #[test]
    fn fixtures_parse() {
        let p = parse_policy(CLOUDFLOW_POLICY).unwrap();
        assert!(p.flow_for(&crate::model::Label::new("personal").unwrap()).is_some());
        let s = parse_schema(CLOUDFLOW_SCHEMA).unwrap();
        assert_eq!(s.rules.len(), 3);
    }

    #[tokio::test]
    async fn seed_trips_each_check() {
        let store = ObjectStore::new(StoreConfig::default());
        seed_demo(&store).await.unwrap();
        let mut journal = FirstSeenJournal::new();
        let report = run_audit(&store, &parse_policy(CLOUDFLOW_POLICY).unwrap(), &mut journal).await.unwrap();
        let count = |id| report.findings.iter().filter(|f| f.check_id == id).count();
        assert_eq!(count(CheckId::RetentionExpired), 1);
        assert_eq!(count(CheckId::OrphanBucket), 1);
        assert!(count(CheckId::OrphanObject) >= 1);
        assert_eq!(count(CheckId::GeoViolation), 0);
        assert_eq!(count(CheckId::RetentionAtRisk), 0);
    }

    #[tokio::test]
    async fn second_seed_refused() {
        let store = ObjectStore::new(StoreConfig::default());
        seed_demo(&store).await.unwrap();
        assert!(matches!(seed_demo(&store).await, Err(DemoError::NotEmpty(5))));
    }
}
