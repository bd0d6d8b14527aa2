//! The validator: replication, geolocation and retention checks.
//!
//! Every check is a pure function of its inputs and returns findings sorted
//! by `(check_id, bucket, key, detail)`.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::journal::FirstSeenJournal;
use super::Snapshot;
use crate::model::{CheckId, Finding, ObjectKey, ReplicaStatus, ReplicationRule, Timestamp};
use crate::policy::TrackingPolicy;
use crate::store::{BucketInfo, ObjectInfo};
use crate::title::extract_labels;

pub(crate) fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Rules of existing buckets grouped by destination bucket.
fn rules_by_destination(snapshot: &Snapshot) -> HashMap<&str, Vec<&ReplicationRule>> {
    let mut map: HashMap<&str, Vec<&ReplicationRule>> = HashMap::new();
    for b in &snapshot.buckets {
        for r in &b.rules {
            map.entry(r.destination_bucket.as_str()).or_default().push(r);
        }
    }
    map
}

/// Source candidates for `replica`: same-key objects in buckets whose rule
/// into the replica's bucket covers the key.
fn source_candidates<'a>(
    replica: &ObjectInfo,
    inbound: &HashMap<&str, Vec<&ReplicationRule>>,
    objects: &HashMap<(&str, &str), &'a ObjectInfo>,
) -> Vec<&'a ObjectInfo> {
    let mut found = Vec::new();
    let mut seen = HashSet::new();
    for rule in inbound.get(replica.bucket.as_str()).into_iter().flatten() {
        if !rule.covers(&replica.key) || !seen.insert(rule.source_bucket.as_str()) {
            continue;
        }
        if let Some(o) = objects.get(&(rule.source_bucket.as_str(), replica.key.as_str())) {
            found.push(*o);
        }
    }
    found
}

fn object_index(snapshot: &Snapshot) -> HashMap<(&str, &str), &ObjectInfo> {
    snapshot
        .objects
        .iter()
        .map(|o| ((o.bucket.as_str(), o.key.as_str()), o))
        .collect()
}

/// Orphan replica detection.
///
/// A bucket holding replicas is an orphan when no existing bucket has a rule
/// pointing at it. A replica is an orphan when none of the buckets
/// replicating into its bucket (with a prefix covering its key) holds an
/// object under the same key.
pub fn check_replication(snapshot: &Snapshot) -> Vec<Finding> {
    let at = snapshot.taken_at;
    let inbound = rules_by_destination(snapshot);
    let objects = object_index(snapshot);
    let mut findings = Vec::new();

    let replica_buckets: BTreeSet<&str> = snapshot
        .objects
        .iter()
        .filter(|o| o.replica_status == ReplicaStatus::Replica)
        .map(|o| o.bucket.as_str())
        .collect();
    for bucket in replica_buckets {
        if !inbound.contains_key(bucket) {
            findings.push(Finding::bucket_level(
                CheckId::OrphanBucket,
                bucket,
                "holds replicas but no existing bucket replicates into it",
                at,
            ));
        }
    }

    for o in snapshot.objects.iter().filter(|o| o.replica_status == ReplicaStatus::Replica) {
        if source_candidates(o, &inbound, &objects).is_empty() {
            findings.push(Finding::object_level(
                CheckId::OrphanObject,
                &o.bucket,
                o.key.clone(),
                "no source object with the same key in any replicating bucket",
                at,
            ));
        }
    }
    sort_findings(&mut findings);
    findings
}

/// Region-group checks at bucket granularity: every replication rule must
/// stay within its source's region group, and buckets holding objects with a
/// geo-restricted label must lie in an allowed group.
pub fn check_geolocation(snapshot: &Snapshot, policy: &TrackingPolicy) -> Vec<Finding> {
    let at = snapshot.taken_at;
    let buckets: HashMap<&str, &BucketInfo> = snapshot.buckets.iter().map(|b| (b.name.as_str(), b)).collect();
    let mut findings = Vec::new();

    for src in &snapshot.buckets {
        for rule in &src.rules {
            let Some(dst) = buckets.get(rule.destination_bucket.as_str()) else { continue };
            let (from, to) = (src.region.group(), dst.region.group());
            if from != to {
                findings.push(Finding::bucket_level(
                    CheckId::GeoViolation,
                    &src.name,
                    format!(
                        "replicates prefix {:?} from {} ({from}) to {} in {} ({to})",
                        rule.key_prefix, src.region, dst.name, dst.region
                    ),
                    at,
                ));
            }
        }
    }

    for geo in &policy.geo_rules {
        let holders: BTreeSet<&str> = snapshot
            .objects
            .iter()
            .filter(|o| o.labels.contains(&geo.label))
            .map(|o| o.bucket.as_str())
            .collect();
        for name in holders {
            let Some(bucket) = buckets.get(name) else { continue };
            let group = bucket.region.group();
            if !geo.allowed_groups.contains(&group) {
                let allowed: Vec<&str> = geo.allowed_groups.iter().map(|g| g.as_str()).collect();
                findings.push(Finding::bucket_level(
                    CheckId::GeoViolation,
                    name,
                    format!(
                        "holds objects labeled {} in {} ({group}); allowed groups: {}",
                        geo.label,
                        bucket.region,
                        allowed.join(",")
                    ),
                    at,
                ));
            }
        }
    }
    sort_findings(&mut findings);
    findings
}

/// Birth time of an object as far as the tracker can tell: the store's
/// creation time when listed, else the journal's first sighting, else `now`.
pub fn effective_birth(o: &ObjectInfo, journal: &FirstSeenJournal, now: Timestamp) -> Timestamp {
    o.created_at
        .or_else(|| journal.get(&o.bucket, o.key.as_str()))
        .unwrap_or(now)
}

/// Life-cycle checks against per-label rules.
///
/// `journal` is the journal as it stood before this snapshot was observed;
/// it supplies birth times for stores without creation dates and reveals
/// objects that vanished since the previous run.
pub fn check_retention(
    snapshot: &Snapshot,
    policy: &TrackingPolicy,
    journal: &FirstSeenJournal,
    now: Timestamp,
) -> Vec<Finding> {
    let inbound = rules_by_destination(snapshot);
    let objects = object_index(snapshot);
    let mut findings = Vec::new();

    for o in &snapshot.objects {
        let rules: Vec<_> = o
            .labels
            .iter()
            .filter_map(|l| policy.lifecycle_for(l))
            .filter(|r| r.delete_after.is_some())
            .collect();
        if rules.is_empty() {
            continue;
        }
        let own = effective_birth(o, journal, now);
        // Replicas follow their source object's clock; with several
        // candidate sources the oldest wins.
        let birth = match o.replica_status {
            ReplicaStatus::Replica => source_candidates(o, &inbound, &objects)
                .into_iter()
                .map(|s| effective_birth(s, journal, now))
                .min()
                .unwrap_or(own),
            ReplicaStatus::Source => own,
        };
        let age = now.since(birth);
        for r in rules {
            let limit = r.delete_after.expect("filtered above");
            if age > limit as i64 {
                findings.push(Finding::object_level(
                    CheckId::RetentionExpired,
                    &o.bucket,
                    o.key.clone(),
                    format!("label {}: age {age}s exceeds delete_after {limit}s", r.label),
                    now,
                ));
            }
        }
    }

    // Objects seen last run but gone now; a rename that keeps the bare title
    // does not count as a deletion.
    let present_bare: HashSet<(&str, String)> = snapshot
        .objects
        .iter()
        .map(|o| (o.bucket.as_str(), bare(o.key.as_str())))
        .collect();
    for (bucket, key, first_seen) in journal.iter() {
        if objects.contains_key(&(bucket, key)) || present_bare.contains(&(bucket, bare(key))) {
            continue;
        }
        let Ok((_, labels)) = extract_labels(key) else { continue };
        let Ok(key) = ObjectKey::new(key) else { continue };
        let age = now.since(first_seen);
        for label in &labels {
            let Some(min) = policy.lifecycle_for(label).and_then(|r| r.retain_min) else { continue };
            if age < min as i64 {
                findings.push(Finding::object_level(
                    CheckId::RetentionAtRisk,
                    bucket,
                    key.clone(),
                    format!("label {label}: deleted at age <= {age}s, retain_min {min}s"),
                    now,
                ));
            }
        }
    }
    sort_findings(&mut findings);
    findings
}

fn bare(key: &str) -> String {
    extract_labels(key).map(|(b, _)| b).unwrap_or_else(|_| key.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Region;
    use crate::policy::parse_policy;

    const DAY: i64 = 86_400;

    struct Fixture {
        snap: Snapshot,
    }

    impl Fixture {
        fn new(now: i64) -> Self {
            Fixture { snap: Snapshot { buckets: Vec::new(), objects: Vec::new(), taken_at: Timestamp(now) } }
        }

        fn bucket(mut self, name: &str, region: &str) -> Self {
            let region = Region::new(region).unwrap();
            self.snap.buckets.push(BucketInfo {
                name: name.into(),
                region_group: region.group(),
                region,
                rules: Vec::new(),
                object_count: 0,
            });
            self
        }

        fn rule(mut self, src: &str, dst: &str, prefix: &str) -> Self {
            let b = self.snap.buckets.iter_mut().find(|b| b.name == src).unwrap();
            b.rules.push(ReplicationRule {
                source_bucket: src.into(),
                destination_bucket: dst.into(),
                key_prefix: prefix.into(),
            });
            self
        }

        fn object(mut self, bucket: &str, key: &str, status: ReplicaStatus, created: Option<i64>) -> Self {
            let (_, labels) = extract_labels(key).unwrap();
            self.snap.objects.push(ObjectInfo {
                bucket: bucket.into(),
                key: ObjectKey::new(key).unwrap(),
                replica_status: status,
                last_modified: Timestamp(created.unwrap_or(0)),
                created_at: created.map(Timestamp),
                labels,
                size: 0,
            });
            self
        }
    }

    fn ids(findings: &[Finding]) -> Vec<(CheckId, String, Option<String>)> {
        findings
            .iter()
            .map(|f| (f.check_id, f.bucket.clone(), f.key.as_ref().map(|k| k.to_string())))
            .collect()
    }

    use ReplicaStatus::{Replica, Source};

    #[test]
    fn orphaned_after_source_deletion() {
        let f = Fixture::new(0)
            .bucket("cv-backup", "eu-central-1")
            .object("cv-backup", "a[personal].pdf", Replica, Some(0))
            .object("cv-backup", "b[personal].pdf", Replica, Some(0));
        let out = check_replication(&f.snap);
        assert_eq!(
            ids(&out),
            vec![
                (CheckId::OrphanBucket, "cv-backup".into(), None),
                (CheckId::OrphanObject, "cv-backup".into(), Some("a[personal].pdf".into())),
                (CheckId::OrphanObject, "cv-backup".into(), Some("b[personal].pdf".into())),
            ]
        );
    }

    #[test]
    fn intact_replication_is_clean() {
        let f = Fixture::new(0)
            .bucket("cv-store", "eu-west-1")
            .bucket("cv-backup", "eu-central-1")
            .rule("cv-store", "cv-backup", "")
            .object("cv-store", "a.pdf", Source, Some(0))
            .object("cv-backup", "a.pdf", Replica, Some(0));
        assert!(check_replication(&f.snap).is_empty());
    }

    #[test]
    fn two_sources_one_deleted_object() {
        let f = Fixture::new(0)
            .bucket("s1", "eu-west-1")
            .bucket("s2", "eu-west-2")
            .bucket("backup", "eu-central-1")
            .rule("s1", "backup", "")
            .rule("s2", "backup", "")
            .object("s1", "one.pdf", Source, Some(0))
            .object("backup", "one.pdf", Replica, Some(0))
            .object("backup", "two.pdf", Replica, Some(0));
        assert_eq!(
            ids(&check_replication(&f.snap)),
            vec![(CheckId::OrphanObject, "backup".into(), Some("two.pdf".into()))]
        );
    }

    #[test]
    fn prefix_must_cover_replica_key() {
        let f = Fixture::new(0)
            .bucket("s", "eu-west-1")
            .bucket("d", "eu-west-1")
            .rule("s", "d", "cv/")
            .object("s", "pub/x.pdf", Source, Some(0))
            .object("d", "pub/x.pdf", Replica, Some(0));
        assert_eq!(ids(&check_replication(&f.snap)), vec![(CheckId::OrphanObject, "d".into(), Some("pub/x.pdf".into()))]);
    }

    #[test]
    fn region_groups_for_rules() {
        let f = Fixture::new(0)
            .bucket("cv-store", "eu-west-1")
            .bucket("cv-backup", "eu-central-1")
            .rule("cv-store", "cv-backup", "");
        assert!(check_geolocation(&f.snap, &TrackingPolicy::default()).is_empty());

        let f = Fixture::new(0)
            .bucket("cv-store", "eu-west-1")
            .bucket("us-backup", "us-east-1")
            .rule("cv-store", "us-backup", "");
        assert_eq!(
            ids(&check_geolocation(&f.snap, &TrackingPolicy::default())),
            vec![(CheckId::GeoViolation, "cv-store".into(), None)]
        );
    }

    #[test]
    fn dangling_rules_are_ignored_by_geo() {
        let f = Fixture::new(0).bucket("a", "eu-west-1").rule("a", "gone", "");
        assert!(check_geolocation(&f.snap, &TrackingPolicy::default()).is_empty());
    }

    #[test]
    fn label_geo_rule() {
        let policy = parse_policy("geo personal groups=EU").unwrap();
        let f = Fixture::new(0)
            .bucket("us-store", "us-east-1")
            .bucket("eu-store", "eu-west-1")
            .object("us-store", "a[personal].pdf", Source, Some(0))
            .object("us-store", "b[personal].pdf", Source, Some(0))
            .object("us-store", "c[public].pdf", Source, Some(0))
            .object("eu-store", "d[personal].pdf", Source, Some(0));
        assert_eq!(ids(&check_geolocation(&f.snap, &policy)), vec![(CheckId::GeoViolation, "us-store".into(), None)]);
    }

    fn personal_policy() -> TrackingPolicy {
        parse_policy("lifecycle personal delete_after=180d").unwrap()
    }

    #[test]
    fn expired_after_180_days() {
        let f = Fixture::new(181 * DAY).bucket("cv", "eu-west-1").object("cv", "a[personal].pdf", Source, Some(0));
        let out = check_retention(&f.snap, &personal_policy(), &FirstSeenJournal::new(), Timestamp(181 * DAY));
        assert_eq!(ids(&out), vec![(CheckId::RetentionExpired, "cv".into(), Some("a[personal].pdf".into()))]);

        let out = check_retention(&f.snap, &personal_policy(), &FirstSeenJournal::new(), Timestamp(10 * DAY));
        assert!(out.is_empty());
    }

    #[test]
    fn exact_boundary() {
        let f = Fixture::new(0).bucket("cv", "eu-west-1").object("cv", "a[personal].pdf", Source, Some(0));
        let p = personal_policy();
        let j = FirstSeenJournal::new();
        assert!(check_retention(&f.snap, &p, &j, Timestamp(180 * DAY - 1)).is_empty());
        assert!(check_retention(&f.snap, &p, &j, Timestamp(180 * DAY)).is_empty());
        assert_eq!(check_retention(&f.snap, &p, &j, Timestamp(180 * DAY + 1)).len(), 1);
    }

    #[test]
    fn unruled_labels_are_ignored() {
        let f = Fixture::new(0).bucket("cv", "eu-west-1").object("cv", "a[public].pdf", Source, Some(0));
        assert!(check_retention(&f.snap, &personal_policy(), &FirstSeenJournal::new(), Timestamp(999 * DAY)).is_empty());
    }

    #[test]
    fn replica_inherits_source_birth() {
        let now = 200 * DAY;
        let f = Fixture::new(now)
            .bucket("src", "eu-west-1")
            .bucket("dst", "eu-west-2")
            .rule("src", "dst", "")
            .object("src", "a[personal].pdf", Source, Some(now - 170 * DAY))
            .object("dst", "a[personal].pdf", Replica, None);
        let mut journal_snapshot = f.snap.clone();
        journal_snapshot.taken_at = Timestamp(0);
        let mut j = FirstSeenJournal::new();
        j.observe(&journal_snapshot);
        assert_eq!(j.get("dst", "a[personal].pdf"), Some(Timestamp(0)));
        assert!(check_retention(&f.snap, &personal_policy(), &j, Timestamp(now)).is_empty());

        // without its source the replica falls back to its own first sighting
        let mut orphan = f.snap.clone();
        orphan.objects.retain(|o| o.bucket == "dst");
        assert_eq!(check_retention(&orphan, &personal_policy(), &j, Timestamp(now)).len(), 1);
    }

    #[test]
    fn journal_supplies_missing_creation_dates() {
        let f = Fixture::new(200 * DAY).bucket("cv", "eu-west-1").object("cv", "a[personal].pdf", Source, None);
        let j = FirstSeenJournal::parse("cv\ta[personal].pdf\t0\n").unwrap();
        assert_eq!(check_retention(&f.snap, &personal_policy(), &j, Timestamp(200 * DAY)).len(), 1);
        // never seen before: born now
        assert!(check_retention(&f.snap, &personal_policy(), &FirstSeenJournal::new(), Timestamp(200 * DAY)).is_empty());
    }

    #[test]
    fn premature_deletion_flagged() {
        let policy = parse_policy("lifecycle invoice retain_min=180d delete_after=365d").unwrap();
        let j = FirstSeenJournal::parse("fin\tq1[invoice].pdf\t0\nfin\tq2[invoice].pdf\t0\nfin\tq3[invoice].pdf\t0\n").unwrap();
        let f = Fixture::new(30 * DAY)
            .bucket("fin", "eu-west-1")
            .object("fin", "q1[invoice].pdf", Source, Some(0))
            .object("fin", "q3[invoice][high].pdf", Source, Some(0));
        let out = check_retention(&f.snap, &policy, &j, Timestamp(30 * DAY));
        assert_eq!(ids(&out), vec![(CheckId::RetentionAtRisk, "fin".into(), Some("q2[invoice].pdf".into()))]);
        // old enough: deletion is fine
        let f = Fixture::new(200 * DAY).bucket("fin", "eu-west-1");
        let out = check_retention(&f.snap, &policy, &j, Timestamp(200 * DAY));
        assert!(out.iter().all(|x| x.check_id != CheckId::RetentionAtRisk));
    }

    #[test]
    fn findings_are_sorted() {
        let f = Fixture::new(0)
            .bucket("z", "eu-west-1")
            .bucket("a", "eu-west-1")
            .object("z", "k.pdf", Replica, Some(0))
            .object("a", "k.pdf", Replica, Some(0));
        let out = check_replication(&f.snap);
        let buckets: Vec<_> = out.iter().map(|f| (f.check_id, f.bucket.as_str())).collect();
        assert_eq!(
            buckets,
            [(CheckId::OrphanBucket, "a"), (CheckId::OrphanBucket, "z"), (CheckId::OrphanObject, "a"), (CheckId::OrphanObject, "z")]
        );
    }
}
