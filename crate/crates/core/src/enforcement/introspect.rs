//! Policy information point: fetching a resource's labels.

use std::net::IpAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use thiserror::Error;

use crate::model::{LabelSet, ResourceRef};
use crate::store::{ObjectStore, StoreError, LABELS_HEADER};
use crate::wire::encode_resource;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntrospectError {
    #[error("resource not found")]
    NotFound,
    #[error("introspection unavailable: {0}")]
    Unavailable(String),
}

#[async_trait]
pub trait Introspector: Send + Sync {
    async fn labels(&self, resource: &ResourceRef) -> Result<LabelSet, IntrospectError>;
}

/// Calls `GET /inspect/<bucket>/<key>` on a store and reads `X-Data-Labels`.
#[derive(Debug, Clone)]
pub struct HttpIntrospector {
    base: String,
    http: reqwest::Client,
    calls: Arc<AtomicU64>,
}

impl HttpIntrospector {
    pub fn new(store_url: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("static client config");
        HttpIntrospector { base: store_url.trim_end_matches('/').to_string(), http, calls: Arc::default() }
    }

    /// Number of introspection requests sent so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl Introspector for HttpIntrospector {
    async fn labels(&self, resource: &ResourceRef) -> Result<LabelSet, IntrospectError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let url = format!("{}/inspect/{}", self.base, encode_resource(&resource.bucket, resource.key.as_str()));
        let resp = self
            .http
            .get(url)
            .send()
            .await
            .map_err(|e| IntrospectError::Unavailable(e.to_string()))?;
        match resp.status() {
            StatusCode::OK => {
                let value = match resp.headers().get(LABELS_HEADER) {
                    Some(v) => v.to_str().map_err(|e| IntrospectError::Unavailable(e.to_string()))?,
                    None => return Err(IntrospectError::Unavailable(format!("missing {LABELS_HEADER} header"))),
                };
                LabelSet::from_header_value(value).map_err(|e| IntrospectError::Unavailable(e.to_string()))
            }
            StatusCode::NOT_FOUND => Err(IntrospectError::NotFound),
            other => Err(IntrospectError::Unavailable(format!("introspection returned {other}"))),
        }
    }
}

/// In-process introspection against an [`ObjectStore`], as a fixed caller address.
#[derive(Debug, Clone)]
pub struct LocalIntrospector {
    store: Arc<ObjectStore>,
    caller: IpAddr,
}

impl LocalIntrospector {
    pub fn new(store: Arc<ObjectStore>, caller: IpAddr) -> Self {
        LocalIntrospector { store, caller }
    }
}

#[async_trait]
impl Introspector for LocalIntrospector {
    async fn labels(&self, resource: &ResourceRef) -> Result<LabelSet, IntrospectError> {
        match self.store.inspect(&resource.to_string(), self.caller) {
            Ok(labels) => Ok(labels),
            Err(StoreError::NoSuchObject(_)) | Err(StoreError::NoSuchBucket(_)) => Err(IntrospectError::NotFound),
            Err(e) => Err(IntrospectError::Unavailable(e.to_string())),
        }
    }
}
