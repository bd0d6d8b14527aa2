use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use labelmesh::enforcement::{server, Authorizer, DecisionCache, FlowLog, HttpIntrospector, Pdp, PdpClient, Pep, DEFAULT_CAPACITY};
use labelmesh::policy::parse_policy;
use labelmesh::store::{self, ObjectStore, StoreConfig};
use tokio::net::TcpListener;

use crate::config::{Component, GlobalArgs, GlobalConfig};
use crate::ServeTarget;

pub struct Options {
    pub hide_created_at: bool,
    pub no_auth: bool,
}

/// Resolves on SIGINT or SIGTERM.
async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                tracing::warn!(error = %e, "cannot watch SIGTERM");
                std::future::pending::<()>().await
            }
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {}
        _ = terminate => {}
    }
    tracing::info!("shutting down");
}

async fn bind(addr: std::net::SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr).await.with_context(|| format!("cannot listen on {addr}"))
}

fn open_flow_log(config: &GlobalConfig) -> Result<Option<Arc<FlowLog>>> {
    config
        .flow_log
        .as_ref()
        .map(|p| FlowLog::open(p).map(Arc::new).with_context(|| format!("opening flow log {}", p.display())))
        .transpose()
}

fn close_flow_log(log: Option<Arc<FlowLog>>) {
    if let Some(log) = log {
        log.close();
        if log.error_count() > 0 {
            tracing::warn!(errors = log.error_count(), path = %log.path().display(), "flow log records were lost");
        }
    }
}

pub async fn run(args: &GlobalArgs, target: ServeTarget, opts: Options) -> Result<ExitCode> {
    let component = match target {
        ServeTarget::Store => Component::Store,
        ServeTarget::Pdp => Component::Pdp,
        ServeTarget::Pep => Component::Pep,
    };
    let config = GlobalConfig::load(args, Some(component))?;
    let cache = || DecisionCache::new(config.cache_ttl, DEFAULT_CAPACITY);
    match component {
        Component::Store => {
            let store = Arc::new(ObjectStore::new(StoreConfig {
                inspect_access: config.inspect_allow.clone(),
                expose_created_at: !opts.hide_created_at,
                ..StoreConfig::default()
            }));
            let listener = bind(config.listen.store).await?;
            announce("store", &listener)?;
            store::serve(store, listener, shutdown_signal()).await?;
        }
        Component::Pdp => {
            let path = config.policy_path()?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let policy = parse_policy(&text).with_context(|| format!("invalid policy {}", path.display()))?;
            let flow_log = open_flow_log(&config)?;
            let mut pdp = Pdp::new(policy, Arc::new(HttpIntrospector::new(&config.store_base()))).with_cache(cache());
            if let Some(log) = &flow_log {
                pdp = pdp.with_flow_log(log.clone());
            }
            let listener = bind(config.listen.pdp).await?;
            announce("pdp", &listener)?;
            server::serve_pdp(Arc::new(pdp), listener, shutdown_signal()).await?;
            close_flow_log(flow_log);
        }
        Component::Pep => {
            let authorizer = match (&config.pdp_url, opts.no_auth) {
                (_, true) => Authorizer::Disabled,
                (Some(url), false) => Authorizer::Remote(PdpClient::new(url.as_str())),
                (None, false) => bail!("the proxy needs --pdp-url (or LABELMESH_PDP_URL), or --no-auth"),
            };
            let flow_log = open_flow_log(&config)?;
            let mut pep = Pep::new(&config.store_base(), authorizer).with_cache(cache());
            if let Some(log) = &flow_log {
                pep = pep.with_flow_log(log.clone());
            }
            let listener = bind(config.listen.pep).await?;
            announce("pep", &listener)?;
            server::serve_pep(Arc::new(pep), listener, shutdown_signal()).await?;
            close_flow_log(flow_log);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Prints the bound address on stdout so scripts can pick up port 0 binds.
fn announce(name: &str, listener: &TcpListener) -> Result<()> {
    let addr = listener.local_addr()?;
    println!("{name} listening on http://{addr}");
    tracing::info!(%addr, "{name} started");
    Ok(())
}
