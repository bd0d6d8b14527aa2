//! TTL-bounded decision cache keyed by (workload, resource).
//!
//! Entries are never served past their expiry. When full, expired entries
//! go first, then the least recently used one.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::model::Decision;

pub const DEFAULT_TTL: Duration = Duration::from_secs(5);
pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Debug, Clone)]
struct Entry {
    decision: Decision,
    expires_at: Instant,
    last_used: u64,
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashMap<(String, String), Entry>,
    tick: u64,
}

#[derive(Debug)]
pub struct DecisionCache {
    ttl: Duration,
    capacity: usize,
    inner: Mutex<Inner>,
}

impl Default for DecisionCache {
    fn default() -> Self {
        DecisionCache::new(DEFAULT_TTL, DEFAULT_CAPACITY)
    }
}

impl DecisionCache {
    pub fn new(ttl: Duration, capacity: usize) -> Self {
        DecisionCache { ttl, capacity, inner: Mutex::default() }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        DecisionCache::new(Duration::ZERO, 0)
    }

    pub fn is_enabled(&self) -> bool {
        !self.ttl.is_zero() && self.capacity > 0
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn get(&self, workload: &str, resource: &str) -> Option<Decision> {
        self.get_at(workload, resource, Instant::now())
    }

    pub fn get_at(&self, workload: &str, resource: &str, now: Instant) -> Option<Decision> {
        if !self.is_enabled() {
            return None;
        }
        let mut inner = self.lock();
        inner.tick += 1;
        let tick = inner.tick;
        let id = (workload.to_string(), resource.to_string());
        match inner.entries.get_mut(&id) {
            Some(e) if now < e.expires_at => {
                e.last_used = tick;
                Some(e.decision.clone())
            }
            Some(_) => {
                inner.entries.remove(&id);
                None
            }
            None => None,
        }
    }

    pub fn insert(&self, workload: &str, resource: &str, decision: Decision) {
        self.insert_at(workload, resource, decision, Instant::now())
    }

    pub fn insert_at(&self, workload: &str, resource: &str, decision: Decision, now: Instant) {
        if !self.is_enabled() {
            return;
        }
        let mut inner = self.lock();
        inner.tick += 1;
        let tick = inner.tick;
        let id = (workload.to_string(), resource.to_string());
        if !inner.entries.contains_key(&id) && inner.entries.len() >= self.capacity {
            inner.entries.retain(|_, e| now < e.expires_at);
            if inner.entries.len() >= self.capacity {
                if let Some(lru) = inner.entries.iter().min_by_key(|(_, e)| e.last_used).map(|(k, _)| k.clone()) {
                    inner.entries.remove(&lru);
                }
            }
        }
        inner.entries.insert(id, Entry { decision, expires_at: now + self.ttl, last_used: tick });
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.lock().entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelSet, Verdict};

    fn decision(reason: &str) -> Decision {
        Decision {
            verdict: Verdict::Allow,
            reason: reason.into(),
            labels_seen: LabelSet::new(),
            workload: "w".into(),
            denied_by: Vec::new(),
        }
    }

    #[test]
    fn never_served_past_expiry() {
        let c = DecisionCache::new(Duration::from_millis(100), 8);
        let t0 = Instant::now();
        c.insert_at("w", "b/k", decision("a"), t0);
        assert!(c.get_at("w", "b/k", t0 + Duration::from_millis(99)).is_some());
        assert!(c.get_at("w", "b/k", t0 + Duration::from_millis(100)).is_none());
        assert!(c.is_empty());
    }

    #[test]
    fn keyed_by_workload_and_resource() {
        let c = DecisionCache::default();
        c.insert("w1", "b/k", decision("a"));
        assert!(c.get("w2", "b/k").is_none());
        assert!(c.get("w1", "b/other").is_none());
        assert_eq!(c.get("w1", "b/k").unwrap().reason, "a");
    }

    #[test]
    fn zero_ttl_disables() {
        let c = DecisionCache::new(Duration::ZERO, 1024);
        c.insert("w", "b/k", decision("a"));
        assert!(c.get("w", "b/k").is_none());
        assert!(!DecisionCache::disabled().is_enabled());
    }

    #[test]
    fn evicts_expired_then_lru() {
        let c = DecisionCache::new(Duration::from_secs(10), 2);
        let t0 = Instant::now();
        c.insert_at("w", "a", decision("a"), t0);
        c.insert_at("w", "b", decision("b"), t0 + Duration::from_secs(1));
        // touch a so b becomes least recently used
        assert!(c.get_at("w", "a", t0 + Duration::from_secs(2)).is_some());
        c.insert_at("w", "c", decision("c"), t0 + Duration::from_secs(3));
        assert_eq!(c.len(), 2);
        assert!(c.get_at("w", "b", t0 + Duration::from_secs(3)).is_none());
        assert!(c.get_at("w", "a", t0 + Duration::from_secs(3)).is_some());

        // a expires at t0+10; inserting at t0+10.5 drops it even though c is older in use
        c.insert_at("w", "d", decision("d"), t0 + Duration::from_millis(10_500));
        assert!(c.get_at("w", "a", t0 + Duration::from_millis(10_600)).is_none());
        assert!(c.get_at("w", "c", t0 + Duration::from_millis(10_600)).is_some());
    }
}
