use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{ConnectInfo, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use super::{ObjectStore, StoreError};
use crate::model::Region;

pub const LABELS_HEADER: &str = "x-data-labels";

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        let status = match self {
            StoreError::NoSuchBucket(_) | StoreError::NoSuchObject(_) => StatusCode::NOT_FOUND,
            StoreError::BucketExists(_) | StoreError::ObjectExists(_) => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            StoreError::Forbidden(_) => StatusCode::FORBIDDEN,
            StoreError::Unreachable(_) | StoreError::Protocol(_) => StatusCode::BAD_GATEWAY,
        };
        let body = json!({ "error": self.to_string(), "kind": self.kind(), "subject": self.subject() });
        (status, Json(body)).into_response()
    }
}

#[derive(Deserialize)]
struct CreateBucket {
    region: String,
}

#[derive(Deserialize)]
struct AddRule {
    destination: String,
    #[serde(default)]
    prefix: String,
}

#[derive(Deserialize)]
struct Rename {
    to: String,
}

#[derive(Deserialize)]
struct Advance {
    seconds: i64,
}

type Shared = State<Arc<ObjectStore>>;

async fn list_buckets(State(store): Shared) -> Response {
    Json(store.list_buckets()).into_response()
}

async fn create_bucket(
    State(store): Shared,
    Path(bucket): Path<String>,
    Json(body): Json<CreateBucket>,
) -> Result<Response, StoreError> {
    let region = Region::new(&body.region).map_err(|e| StoreError::Invalid(e.to_string()))?;
    let info = store.create_bucket(&bucket, region)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn delete_bucket(State(store): Shared, Path(bucket): Path<String>) -> Result<StatusCode, StoreError> {
    store.delete_bucket(&bucket)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn add_rule(
    State(store): Shared,
    Path(bucket): Path<String>,
    Json(body): Json<AddRule>,
) -> Result<Response, StoreError> {
    let rule = store.add_replication_rule(&bucket, &body.destination, &body.prefix)?;
    Ok((StatusCode::CREATED, Json(rule)).into_response())
}

async fn list_objects(State(store): Shared, Path(bucket): Path<String>) -> Result<Response, StoreError> {
    Ok(Json(store.list_objects(&bucket)?).into_response())
}

async fn put_file(
    State(store): Shared,
    Path((bucket, key)): Path<(String, String)>,
    body: Bytes,
) -> Result<Response, StoreError> {
    let info = store.put_object(&bucket, &key, body)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn get_file(State(store): Shared, Path((bucket, key)): Path<(String, String)>) -> Result<Response, StoreError> {
    let record = store.get_object(&bucket, &key)?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream")),
            (header::LAST_MODIFIED, HeaderValue::from(record.last_modified.0)),
        ],
        record.content,
    )
        .into_response())
}

async fn delete_file(State(store): Shared, Path((bucket, key)): Path<(String, String)>) -> Result<StatusCode, StoreError> {
    store.delete_object(&bucket, &key)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn rename_file(
    State(store): Shared,
    Path((bucket, key)): Path<(String, String)>,
    Json(body): Json<Rename>,
) -> Result<Response, StoreError> {
    Ok(Json(store.rename_object(&bucket, &key, &body.to)?).into_response())
}

async fn inspect(
    State(store): Shared,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    Path((bucket, key)): Path<(String, String)>,
) -> Result<Response, StoreError> {
    let labels = store.inspect(&format!("{bucket}/{key}"), peer.ip())?;
    let value = HeaderValue::from_str(&labels.to_header_value())
        .map_err(|e| StoreError::Protocol(e.to_string()))?;
    Ok((StatusCode::OK, [(LABELS_HEADER, value)]).into_response())
}

async fn clock(State(store): Shared) -> Response {
    Json(json!({ "now": store.now() })).into_response()
}

async fn advance(State(store): Shared, Json(body): Json<Advance>) -> Result<Response, StoreError> {
    let now = store.advance_clock(body.seconds)?;
    Ok(Json(json!({ "now": now })).into_response())
}

async fn log_access(State(store): Shared, req: Request, next: Next) -> Response {
    store.record_access(req.method().as_str(), req.uri().path());
    next.run(req).await
}

/// HTTP interface of the store. Serve it with connect info so the
/// introspection allow-list can see caller addresses.
pub fn router(store: Arc<ObjectStore>) -> Router {
    Router::new()
        .route("/buckets", get(list_buckets))
        .route("/buckets/{bucket}", put(create_bucket).delete(delete_bucket))
        .route("/buckets/{bucket}/rules", put(add_rule))
        .route("/buckets/{bucket}/objects", get(list_objects))
        .route("/files/{bucket}/{*key}", put(put_file).get(get_file).delete(delete_file))
        .route("/rename/{bucket}/{*key}", post(rename_file))
        .route("/inspect/{bucket}/{*key}", get(inspect))
        .route("/clock", get(clock))
        .route("/clock/advance", post(advance))
        .layer(middleware::from_fn_with_state(store.clone(), log_access))
        .with_state(store)
}

/// Serves the store on `listener` until `shutdown` resolves.
pub async fn serve(
    store: Arc<ObjectStore>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(shutdown)
        .await
}
