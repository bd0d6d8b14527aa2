//! Label-based data-flow tracking and enforcement for cloud object storage.
//!
//! * [`store`]: a simulated multi-region object store with replication
//! * [`tracker`]: audits replication, geolocation and retention against a policy
//! * [`dsl`]: keyword labeling schemas and the labeler
//! * [`enforcement`]: decision point, enforcing proxy and flow log
//! * [`bench`]: latency measurements across the three wirings

pub mod bench;
pub mod demo;
pub mod dsl;
pub mod enforcement;
pub mod model;
pub mod policy;
pub mod store;
pub mod title;
pub mod tracker;
pub mod wire;
