//! First-seen journal: when the tracker first observed each object.
//!
//! Object stores typically expose only a last-modified time, so creation
//! times are reconstructed by watching listings. The on-disk form is one
//! `bucket TAB key TAB epoch-seconds` line per object, sorted.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::Snapshot;
use crate::model::Timestamp;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("journal i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FirstSeenJournal {
    entries: BTreeMap<(String, String), Timestamp>,
}

impl FirstSeenJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, bucket: &str, key: &str) -> Option<Timestamp> {
        self.entries.get(&(bucket.to_string(), key.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, Timestamp)> {
        self.entries.iter().map(|((b, k), t)| (b.as_str(), k.as_str(), *t))
    }

    /// Records first sightings from `snapshot` at its capture time and drops
    /// entries for objects no longer listed. Existing entries keep their time.
    pub fn observe(&mut self, snapshot: &Snapshot) {
        let now = snapshot.taken_at;
        let mut next = BTreeMap::new();
        for o in &snapshot.objects {
            let id = (o.bucket.clone(), o.key.to_string());
            let seen = self.entries.get(&id).copied().unwrap_or(now);
            next.insert(id, seen);
        }
        self.entries = next;
    }

    pub fn parse(text: &str) -> Result<Self, JournalError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| JournalError::Parse { line: i + 1, message: message.to_string() };
            let mut parts = line.split('\t');
            let (Some(bucket), Some(key), Some(ts), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected three tab-separated fields"));
            };
            if bucket.is_empty() || key.is_empty() {
                return Err(err("empty bucket or key"));
            }
            let ts: i64 = ts.parse().map_err(|_| err("invalid timestamp"))?;
            entries.insert((bucket.to_string(), key.to_string()), Timestamp(ts));
        }
        Ok(FirstSeenJournal { entries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((b, k), t) in &self.entries {
            out.push_str(b);
            out.push('\t');
            out.push_str(k);
            out.push('\t');
            out.push_str(&t.0.to_string());
            out.push('\n');
        }
        out
    }

    /// Loads a journal; a missing file yields an empty journal.
    pub fn load(path: &Path) -> Result<Self, JournalError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes via a temporary file and rename so a crash never leaves a torn journal.
    pub fn save(&self, path: &Path) -> Result<(), JournalError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_text().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelSet, ObjectKey, ReplicaStatus};
    use crate::store::ObjectInfo;

    fn snap(at: i64, keys: &[(&str, &str)]) -> Snapshot {
        Snapshot {
            buckets: Vec::new(),
            objects: keys
                .iter()
                .map(|(b, k)| ObjectInfo {
                    bucket: b.to_string(),
                    key: ObjectKey::new(*k).unwrap(),
                    replica_status: ReplicaStatus::Source,
                    last_modified: Timestamp(at),
                    created_at: None,
                    labels: LabelSet::new(),
                    size: 0,
                })
                .collect(),
            taken_at: Timestamp(at),
        }
    }

    #[test]
    fn first_sighting_is_kept() {
        let mut j = FirstSeenJournal::new();
        j.observe(&snap(100, &[("a", "x.pdf")]));
        j.observe(&snap(200, &[("a", "x.pdf"), ("a", "y.pdf")]));
        assert_eq!(j.get("a", "x.pdf"), Some(Timestamp(100)));
        assert_eq!(j.get("a", "y.pdf"), Some(Timestamp(200)));
        j.observe(&snap(300, &[("a", "y.pdf")]));
        assert_eq!(j.get("a", "x.pdf"), None);
        assert_eq!(j.len(), 1);
    }

    #[test]
    fn text_round_trip() {
        let mut j = FirstSeenJournal::new();
        j.observe(&snap(7, &[("b", "dir/x[personal].pdf"), ("a", "z")]));
        let text = j.to_text();
        assert_eq!(text, "a\tz\t7\nb\tdir/x[personal].pdf\t7\n");
        assert_eq!(FirstSeenJournal::parse(&text).unwrap(), j);
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(FirstSeenJournal::parse("a\tb\n"), Err(JournalError::Parse { line: 1, .. })));
        assert!(matches!(FirstSeenJournal::parse("a\tb\tc\n"), Err(JournalError::Parse { .. })));
        assert!(matches!(FirstSeenJournal::parse("a\tb\t1\t2\n"), Err(JournalError::Parse { .. })));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.tsv");
        assert!(FirstSeenJournal::load(&path).unwrap().is_empty());
        let mut j = FirstSeenJournal::new();
        j.observe(&snap(5, &[("a", "x")]));
        j.save(&path).unwrap();
        assert_eq!(FirstSeenJournal::load(&path).unwrap(), j);
    }
}
