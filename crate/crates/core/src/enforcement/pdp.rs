//! Policy decision point: evaluates authorization requests against the flow
//! rules, fetching labels through an [`Introspector`].

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;

use super::cache::DecisionCache;
use super::decide::{evaluate, is_cacheable, AuthzRequest, PDP_UNAVAILABLE};
use super::flowlog::FlowLog;
use super::introspect::Introspector;
use crate::model::{Decision, LabelSet, ModelError, Verdict};
use crate::policy::TrackingPolicy;

pub struct Pdp {
    policy: Arc<TrackingPolicy>,
    introspector: Arc<dyn Introspector>,
    cache: DecisionCache,
    flow_log: Option<Arc<FlowLog>>,
}

impl std::fmt::Debug for Pdp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pdp")
            .field("policy", &self.policy.digest())
            .field("cache", &self.cache)
            .field("flow_log", &self.flow_log.as_ref().map(|l| l.path().to_path_buf()))
            .finish_non_exhaustive()
    }
}

impl Pdp {
    /// A PDP with the default decision cache and no flow log.
    pub fn new(policy: TrackingPolicy, introspector: Arc<dyn Introspector>) -> Self {
        Pdp { policy: Arc::new(policy), introspector, cache: DecisionCache::default(), flow_log: None }
    }

    pub fn with_cache(mut self, cache: DecisionCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_flow_log(mut self, log: Arc<FlowLog>) -> Self {
        self.flow_log = Some(log);
        self
    }

    pub fn policy(&self) -> &TrackingPolicy {
        &self.policy
    }

    pub fn cache(&self) -> &DecisionCache {
        &self.cache
    }

    /// Decides `request`. With `use_cache` false the cache is neither read
    /// nor written.
    pub async fn decide(&self, request: &AuthzRequest, use_cache: bool) -> Result<Decision, ModelError> {
        let resource = request.validate()?;
        if use_cache {
            if let Some(hit) = self.cache.get(&request.workload, &request.resource) {
                self.log(&hit, request);
                return Ok(hit);
            }
        }
        let labels = self.introspector.labels(&resource).await;
        let decision = evaluate(request, &self.policy, labels);
        if use_cache && is_cacheable(&decision) {
            self.cache.insert(&request.workload, &request.resource, decision.clone());
        }
        self.log(&decision, request);
        Ok(decision)
    }

    fn log(&self, decision: &Decision, request: &AuthzRequest) {
        if let Some(log) = &self.flow_log {
            log.record(decision, request);
        }
    }
}

fn bypasses_cache(headers: &HeaderMap) -> bool {
    headers
        .get_all(axum::http::header::CACHE_CONTROL)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|d| d.trim().eq_ignore_ascii_case("no-cache"))
}

async fn decide_handler(
    State(pdp): State<Arc<Pdp>>,
    headers: HeaderMap,
    Json(request): Json<AuthzRequest>,
) -> Response {
    match pdp.decide(&request, !bypasses_cache(&headers)).await {
        Ok(decision) => Json(decision).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

/// `POST /v1/decide`. Send `Cache-Control: no-cache` to skip the decision cache.
pub fn router(pdp: Arc<Pdp>) -> Router {
    Router::new().route("/v1/decide", post(decide_handler)).with_state(pdp)
}

pub async fn serve(
    pdp: Arc<Pdp>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(pdp)).with_graceful_shutdown(shutdown).await
}

/// HTTP client for a remote PDP.
#[derive(Debug, Clone)]
pub struct PdpClient {
    url: String,
    http: reqwest::Client,
}

impl PdpClient {
    pub fn new(pdp_url: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("static client config");
        PdpClient { url: format!("{}/v1/decide", pdp_url.trim_end_matches('/')), http }
    }

    /// Asks the PDP. Transport failures and malformed answers become a
    /// DENY with reason `pdp-unavailable`.
    pub async fn decide(&self, request: &AuthzRequest, use_cache: bool) -> Decision {
        let mut req = self.http.post(&self.url).json(request);
        if !use_cache {
            req = req.header(reqwest::header::CACHE_CONTROL, "no-cache");
        }
        let answer = match req.send().await {
            Ok(resp) if resp.status().is_success() => resp.json::<Decision>().await.map_err(|e| e.to_string()),
            Ok(resp) => Err(format!("pdp returned {}", resp.status())),
            Err(e) => Err(e.to_string()),
        };
        answer.unwrap_or_else(|e| {
            tracing::warn!(error = %e, "pdp unavailable, denying");
            Decision {
                verdict: Verdict::Deny,
                reason: PDP_UNAVAILABLE.to_string(),
                labels_seen: LabelSet::new(),
                workload: request.workload.clone(),
                denied_by: Vec::new(),
            }
        })
    }
}
