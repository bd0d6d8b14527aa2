use async_trait::async_trait;
use bytes::Bytes;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use super::{BucketInfo, ObjectInfo, ObjectStore, StoreError};
use crate::model::{Region, ReplicationRule, Timestamp};
use crate::wire::{encode_path, encode_segment};

/// Operations the tracker, labeler and seeding code need from a store.
#[async_trait]
pub trait StoreClient: Send + Sync {
    async fn list_buckets(&self) -> Result<Vec<BucketInfo>, StoreError>;
    async fn list_objects(&self, bucket: &str) -> Result<Vec<ObjectInfo>, StoreError>;
    /// Current value of the store's clock.
    async fn now(&self) -> Result<Timestamp, StoreError>;
    async fn advance_clock(&self, seconds: i64) -> Result<Timestamp, StoreError>;
    async fn create_bucket(&self, name: &str, region: &Region) -> Result<BucketInfo, StoreError>;
    async fn delete_bucket(&self, name: &str) -> Result<(), StoreError>;
    async fn add_replication_rule(&self, source: &str, destination: &str, prefix: &str) -> Result<ReplicationRule, StoreError>;
    async fn put_object(&self, bucket: &str, key: &str, content: Bytes) -> Result<ObjectInfo, StoreError>;
    async fn get_object(&self, bucket: &str, key: &str) -> Result<Bytes, StoreError>;
    async fn delete_object(&self, bucket: &str, key: &str) -> Result<(), StoreError>;
    async fn rename_object(&self, bucket: &str, from: &str, to: &str) -> Result<ObjectInfo, StoreError>;
}

#[async_trait]
impl StoreClient for ObjectStore {
    async fn list_buckets(&self) -> Result<Vec<BucketInfo>, StoreError> {
        Ok(ObjectStore::list_buckets(self))
    }
    async fn list_objects(&self, bucket: &str) -> Result<Vec<ObjectInfo>, StoreError> {
        ObjectStore::list_objects(self, bucket)
    }
    async fn now(&self) -> Result<Timestamp, StoreError> {
        Ok(ObjectStore::now(self))
    }
    async fn advance_clock(&self, seconds: i64) -> Result<Timestamp, StoreError> {
        ObjectStore::advance_clock(self, seconds)
    }
    async fn create_bucket(&self, name: &str, region: &Region) -> Result<BucketInfo, StoreError> {
        ObjectStore::create_bucket(self, name, region.clone())
    }
    async fn delete_bucket(&self, name: &str) -> Result<(), StoreError> {
        ObjectStore::delete_bucket(self, name)
    }
    async fn add_replication_rule(&self, source: &str, destination: &str, prefix: &str) -> Result<ReplicationRule, StoreError> {
        ObjectStore::add_replication_rule(self, source, destination, prefix)
    }
    async fn put_object(&self, bucket: &str, key: &str, content: Bytes) -> Result<ObjectInfo, StoreError> {
        ObjectStore::put_object(self, bucket, key, content)
    }
    async fn get_object(&self, bucket: &str, key: &str) -> Result<Bytes, StoreError> {
        ObjectStore::get_object(self, bucket, key).map(|r| r.content)
    }
    async fn delete_object(&self, bucket: &str, key: &str) -> Result<(), StoreError> {
        ObjectStore::delete_object(self, bucket, key)
    }
    async fn rename_object(&self, bucket: &str, from: &str, to: &str) -> Result<ObjectInfo, StoreError> {
        ObjectStore::rename_object(self, bucket, from, to)
    }
}

/// Talks to a store over its HTTP interface.
#[derive(Debug, Clone)]
pub struct HttpStoreClient {
    base: String,
    http: reqwest::Client,
}

#[derive(Deserialize)]
struct ErrorBody {
    kind: String,
    subject: String,
}

#[derive(Deserialize)]
struct ClockBody {
    now: Timestamp,
}

impl HttpStoreClient {
    pub fn new(base_url: &str) -> Self {
        HttpStoreClient::with_client(base_url, reqwest::Client::new())
    }

    pub fn with_client(base_url: &str, http: reqwest::Client) -> Self {
        HttpStoreClient { base: base_url.trim_end_matches('/').to_string(), http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn file_path(prefix: &str, bucket: &str, key: &str) -> String {
        format!("/{prefix}/{}/{}", encode_segment(bucket), encode_path(key))
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<reqwest::Response, StoreError> {
        let resp = req.send().await.map_err(|e| StoreError::Unreachable(e.to_string()))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => StoreError::from_kind(&body.kind, body.subject),
            Err(_) if status == StatusCode::NOT_FOUND => StoreError::Protocol(format!("404 {text}")),
            Err(_) => StoreError::Protocol(format!("{status} {text}")),
        })
    }

    async fn json<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T, StoreError> {
        self.send(req)
            .await?
            .json::<T>()
            .await
            .map_err(|e| StoreError::Protocol(e.to_string()))
    }
}

#[async_trait]
impl StoreClient for HttpStoreClient {
    async fn list_buckets(&self) -> Result<Vec<BucketInfo>, StoreError> {
        self.json(self.http.get(self.url("/buckets"))).await
    }

    async fn list_objects(&self, bucket: &str) -> Result<Vec<ObjectInfo>, StoreError> {
        let path = format!("/buckets/{}/objects", encode_segment(bucket));
        self.json(self.http.get(self.url(&path))).await
    }

    async fn now(&self) -> Result<Timestamp, StoreError> {
        let body: ClockBody = self.json(self.http.get(self.url("/clock"))).await?;
        Ok(body.now)
    }

    async fn advance_clock(&self, seconds: i64) -> Result<Timestamp, StoreError> {
        let req = self.http.post(self.url("/clock/advance")).json(&json!({ "seconds": seconds }));
        let body: ClockBody = self.json(req).await?;
        Ok(body.now)
    }

    async fn create_bucket(&self, name: &str, region: &Region) -> Result<BucketInfo, StoreError> {
        let path = format!("/buckets/{}", encode_segment(name));
        self.json(self.http.put(self.url(&path)).json(&json!({ "region": region }))).await
    }

    async fn delete_bucket(&self, name: &str) -> Result<(), StoreError> {
        let path = format!("/buckets/{}", encode_segment(name));
        self.send(self.http.delete(self.url(&path))).await.map(|_| ())
    }

    async fn add_replication_rule(&self, source: &str, destination: &str, prefix: &str) -> Result<ReplicationRule, StoreError> {
        let path = format!("/buckets/{}/rules", encode_segment(source));
        let body = json!({ "destination": destination, "prefix": prefix });
        self.json(self.http.put(self.url(&path)).json(&body)).await
    }

    async fn put_object(&self, bucket: &str, key: &str, content: Bytes) -> Result<ObjectInfo, StoreError> {
        let path = Self::file_path("files", bucket, key);
        self.json(self.http.put(self.url(&path)).body(content)).await
    }

    async fn get_object(&self, bucket: &str, key: &str) -> Result<Bytes, StoreError> {
        let path = Self::file_path("files", bucket, key);
        self.send(self.http.get(self.url(&path)))
            .await?
            .bytes()
            .await
            .map_err(|e| StoreError::Protocol(e.to_string()))
    }

    async fn delete_object(&self, bucket: &str, key: &str) -> Result<(), StoreError> {
        let path = Self::file_path("files", bucket, key);
        self.send(self.http.delete(self.url(&path))).await.map(|_| ())
    }

    async fn rename_object(&self, bucket: &str, from: &str, to: &str) -> Result<ObjectInfo, StoreError> {
        let path = Self::file_path("rename", bucket, from);
        self.json(self.http.post(self.url(&path)).json(&json!({ "to": to }))).await
    }
}
