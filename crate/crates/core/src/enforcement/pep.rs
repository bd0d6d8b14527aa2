//! Policy enforcement point: a reverse proxy in front of the store that
//! authorizes file reads before relaying them.
//!
//! The caller names itself in `X-Workload-Id`. Nothing verifies that claim,
//! so the proxy is only as trustworthy as the network path to it.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderName, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use percent_encoding::percent_decode_str;
use serde_json::json;
use tokio::net::TcpListener;

use super::cache::DecisionCache;
use super::decide::{is_cacheable, AuthzRequest};
use super::flowlog::FlowLog;
use super::pdp::{Pdp, PdpClient};
use crate::model::Decision;

pub const WORKLOAD_HEADER: &str = "x-workload-id";

const MAX_BODY: usize = 64 * 1024 * 1024;

/// Where the proxy gets its verdicts from.
#[derive(Debug, Clone)]
pub enum Authorizer {
    /// Forward everything; used to measure the bare proxy cost.
    Disabled,
    Remote(PdpClient),
    Local(Arc<Pdp>),
}

#[derive(Debug)]
pub struct Pep {
    upstream: String,
    authorizer: Authorizer,
    cache: DecisionCache,
    flow_log: Option<Arc<FlowLog>>,
    http: reqwest::Client,
}

impl Pep {
    pub fn new(store_url: &str, authorizer: Authorizer) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("static client config");
        Pep {
            upstream: store_url.trim_end_matches('/').to_string(),
            authorizer,
            cache: DecisionCache::default(),
            flow_log: None,
            http,
        }
    }

    pub fn with_cache(mut self, cache: DecisionCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_flow_log(mut self, log: Arc<FlowLog>) -> Self {
        self.flow_log = Some(log);
        self
    }

    pub fn cache(&self) -> &DecisionCache {
        &self.cache
    }

    pub fn flow_log(&self) -> Option<&Arc<FlowLog>> {
        self.flow_log.as_ref()
    }

    async fn authorize(&self, request: &AuthzRequest) -> Option<Decision> {
        if matches!(self.authorizer, Authorizer::Disabled) {
            return None;
        }
        if let Some(hit) = self.cache.get(&request.workload, &request.resource) {
            return Some(hit);
        }
        let decision = match &self.authorizer {
            Authorizer::Disabled => return None,
            Authorizer::Remote(client) => client.decide(request, true).await,
            Authorizer::Local(pdp) => match pdp.decide(request, true).await {
                Ok(d) => d,
                Err(e) => return Some(invalid(request, e.to_string())),
            },
        };
        if is_cacheable(&decision) {
            self.cache.insert(&request.workload, &request.resource, decision.clone());
        }
        Some(decision)
    }

    async fn forward(&self, req: Request) -> Response {
        let (parts, body) = req.into_parts();
        let path = parts.uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
        let url = format!("{}{}", self.upstream, path);
        let body = match to_bytes(body, MAX_BODY).await {
            Ok(b) => b,
            Err(e) => return reject(StatusCode::PAYLOAD_TOO_LARGE, &e.to_string()),
        };
        let mut headers = parts.headers;
        strip_hop_by_hop(&mut headers);
        headers.remove(axum::http::header::HOST);
        let sent = self.http.request(parts.method, url).headers(headers).body(body).send().await;
        let upstream = match sent {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "upstream unreachable");
                return reject(StatusCode::BAD_GATEWAY, "upstream-unavailable");
            }
        };
        let status = upstream.status();
        let mut headers = upstream.headers().clone();
        strip_hop_by_hop(&mut headers);
        headers.remove(axum::http::header::CONTENT_LENGTH);
        let bytes = match upstream.bytes().await {
            Ok(b) => b,
            Err(e) => {
                tracing::warn!(error = %e, "upstream body failed");
                return reject(StatusCode::BAD_GATEWAY, "upstream-unavailable");
            }
        };
        let mut resp = Response::new(Body::from(bytes));
        *resp.status_mut() = status;
        *resp.headers_mut() = headers;
        resp
    }
}

fn invalid(request: &AuthzRequest, reason: String) -> Decision {
    Decision {
        verdict: crate::model::Verdict::Deny,
        reason,
        labels_seen: Default::default(),
        workload: request.workload.clone(),
        denied_by: Vec::new(),
    }
}

fn reject(status: StatusCode, reason: &str) -> Response {
    (status, Json(json!({ "reason": reason }))).into_response()
}

const HOP_BY_HOP: [&str; 8] = [
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

/// Removes hop-by-hop headers, including any named in `Connection`.
pub fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let named: Vec<HeaderName> = headers
        .get_all(axum::http::header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|n| HeaderName::from_bytes(n.trim().as_bytes()).ok())
        .collect();
    for name in named {
        headers.remove(name);
    }
    for name in HOP_BY_HOP {
        headers.remove(name);
    }
}

/// The `bucket/key` a file path refers to, percent-decoded.
fn file_resource(path: &str) -> Option<String> {
    let rest = path.strip_prefix("/files/")?;
    percent_decode_str(rest).decode_utf8().ok().map(|s| s.into_owned())
}

async fn proxy(State(pep): State<Arc<Pep>>, req: Request) -> Response {
    let workload = req
        .headers()
        .get(WORKLOAD_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string);
    let Some(workload) = workload else {
        return reject(StatusCode::UNAUTHORIZED, "missing X-Workload-Id header");
    };
    let path = req.uri().path().to_string();
    // the proxy's own address is on the store's introspection allow-list
    if path == "/inspect" || path.starts_with("/inspect/") {
        return reject(StatusCode::FORBIDDEN, "introspection is not reachable through the proxy");
    }
    let resource = match (req.method(), file_resource(&path)) {
        (&Method::GET, Some(resource)) => resource,
        _ => {
            tracing::info!(%workload, method = %req.method(), %path, "forwarding unchecked request");
            return pep.forward(req).await;
        }
    };
    let request = AuthzRequest::new(workload, resource, req.method().as_str());
    if let Some(decision) = pep.authorize(&request).await {
        if let Some(log) = &pep.flow_log {
            log.record(&decision, &request);
        }
        if !decision.is_allow() {
            return reject(StatusCode::FORBIDDEN, &decision.reason);
        }
    }
    pep.forward(req).await
}

pub fn router(pep: Arc<Pep>) -> Router {
    Router::new().fallback(proxy).with_state(pep)
}

pub async fn serve(
    pep: Arc<Pep>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(pep)).with_graceful_shutdown(shutdown).await
}
