//! Append-only flow log: one JSON line per enforced decision.
//!
//! Request handlers hand records to a single writer thread over a channel.
//! Write failures never block or alter decisions; they are counted.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::decide::AuthzRequest;
use crate::model::{Decision, LabelSet, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub timestamp: String,
    pub workload: String,
    pub resource: String,
    pub labels_seen: LabelSet,
    pub verdict: Verdict,
    pub reason: String,
}

impl FlowRecord {
    pub fn new(decision: &Decision, request: &AuthzRequest) -> Self {
        FlowRecord {
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            workload: request.workload.clone(),
            resource: request.resource.clone(),
            labels_seen: decision.labels_seen.clone(),
            verdict: decision.verdict,
            reason: decision.reason.clone(),
        }
    }
}

enum Msg {
    Record(FlowRecord),
    Flush(Sender<()>),
}

#[derive(Debug)]
pub struct FlowLog {
    path: PathBuf,
    tx: Mutex<Option<Sender<Msg>>>,
    errors: Arc<AtomicU64>,
    writer: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for Msg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Msg::Record(r) => f.debug_tuple("Record").field(r).finish(),
            Msg::Flush(_) => f.write_str("Flush"),
        }
    }
}

fn write_record(file: &mut File, record: &FlowRecord) -> io::Result<()> {
    let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()
}

impl FlowLog {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let errors = Arc::new(AtomicU64::new(0));
        let (tx, rx) = mpsc::channel::<Msg>();
        let counter = errors.clone();
        let writer = std::thread::Builder::new().name("flow-log".into()).spawn(move || {
            for msg in rx {
                match msg {
                    Msg::Record(record) => {
                        if let Err(e) = write_record(&mut file, &record) {
                            counter.fetch_add(1, Ordering::Relaxed);
                            tracing::error!(error = %e, "flow log write failed");
                        }
                    }
                    Msg::Flush(ack) => {
                        let _ = ack.send(());
                    }
                }
            }
        })?;
        Ok(FlowLog { path, tx: Mutex::new(Some(tx)), errors, writer: Mutex::new(Some(writer)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, decision: &Decision, request: &AuthzRequest) {
        let sent = self
            .tx
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .as_ref()
            .map(|tx| tx.send(Msg::Record(FlowRecord::new(decision, request))).is_ok())
            .unwrap_or(false);
        if !sent {
            self.errors.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Blocks until every record handed in so far has been written.
    pub fn flush(&self) {
        let (ack_tx, ack_rx) = mpsc::channel();
        let sent = self
            .tx
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .as_ref()
            .map(|tx| tx.send(Msg::Flush(ack_tx)).is_ok())
            .unwrap_or(false);
        if sent {
            let _ = ack_rx.recv();
        }
    }

    /// Number of records that could not be written.
    pub fn error_count(&self) -> u64 {
        self.errors.load(Ordering::Relaxed)
    }

    /// Stops the writer after draining pending records.
    pub fn close(&self) {
        self.tx.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(handle) = self.writer.lock().unwrap_or_else(|e| e.into_inner()).take() {
            let _ = handle.join();
        }
    }
}

impl Drop for FlowLog {
    fn drop(&mut self) {
        self.close();
    }
}

/// Reads all records of a flow log file.
pub fn read_flow_log(path: impl AsRef<Path>) -> io::Result<Vec<FlowRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}

/// Flow history of one label: every record whose resource carried it.
pub fn flows_with_label<'a>(records: &'a [FlowRecord], label: &str) -> Vec<&'a FlowRecord> {
    records.iter().filter(|r| r.labels_seen.contains_str(label)).collect()
}
