//! Effective configuration: command-line flags, then `LABELMESH_*`
//! environment variables (both handled by clap), then the config file, then
//! built-in defaults.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use labelmesh::enforcement::DEFAULT_TTL;
use labelmesh::store::InspectAccess;
use serde::{Deserialize, Serialize};
use url::Url;

pub const DEFAULT_STORE_URL: &str = "http://127.0.0.1:8080";
pub const DEFAULT_STORE_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_PDP_LISTEN: &str = "127.0.0.1:8081";
pub const DEFAULT_PEP_LISTEN: &str = "127.0.0.1:8082";
pub const DEFAULT_JOURNAL: &str = "labelmesh-journal.tsv";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "LABELMESH_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "LABELMESH_STORE_URL")]
    pub store_url: Option<String>,
    #[arg(long, global = true, env = "LABELMESH_PDP_URL")]
    pub pdp_url: Option<String>,
    /// Listen address of the component started by `serve`.
    #[arg(long, global = true, env = "LABELMESH_LISTEN")]
    pub listen: Option<String>,
    #[arg(long, global = true, env = "LABELMESH_POLICY")]
    pub policy: Option<PathBuf>,
    #[arg(long, global = true, env = "LABELMESH_SCHEMA")]
    pub schema: Option<PathBuf>,
    #[arg(long, global = true, env = "LABELMESH_JOURNAL")]
    pub journal: Option<PathBuf>,
    #[arg(long, global = true, env = "LABELMESH_FLOW_LOG")]
    pub flow_log: Option<PathBuf>,
    /// Decision cache TTL in milliseconds; 0 disables caching.
    #[arg(long, global = true, env = "LABELMESH_CACHE_TTL_MS")]
    pub cache_ttl_ms: Option<u64>,
    /// Comma-separated addresses allowed to call the introspection endpoint, or `any`.
    #[arg(long, global = true, env = "LABELMESH_INSPECT_ALLOW")]
    pub inspect_allow: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store_url: Option<String>,
    pub pdp_url: Option<String>,
    pub store_listen: Option<String>,
    pub pdp_listen: Option<String>,
    pub pep_listen: Option<String>,
    pub policy: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub flow_log: Option<PathBuf>,
    pub cache_ttl_ms: Option<u64>,
    pub inspect_allow: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Listen {
    pub store: SocketAddr,
    pub pdp: SocketAddr,
    pub pep: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlobalConfig {
    pub store_url: Url,
    pub pdp_url: Option<Url>,
    pub listen: Listen,
    pub policy: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub journal: PathBuf,
    pub flow_log: Option<PathBuf>,
    #[serde(serialize_with = "as_millis")]
    pub cache_ttl: Duration,
    #[serde(serialize_with = "access_text")]
    pub inspect_allow: InspectAccess,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_millis() as u64)
}

fn access_text<S: serde::Serializer>(a: &InspectAccess, s: S) -> Result<S::Ok, S::Error> {
    match a {
        InspectAccess::Any => s.serialize_str("any"),
        InspectAccess::Only(ips) => {
            s.serialize_str(&ips.iter().map(IpAddr::to_string).collect::<Vec<_>>().join(","))
        }
    }
}

fn parse_url(what: &str, text: &str) -> Result<Url> {
    let url = Url::parse(text).with_context(|| format!("invalid {what} {text:?}"))?;
    if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
        bail!("invalid {what} {text:?}: expected an http(s) URL with a host");
    }
    Ok(url)
}

fn parse_addr(what: &str, text: &str) -> Result<SocketAddr> {
    text.parse().with_context(|| format!("invalid {what} address {text:?}"))
}

fn parse_access(text: &str) -> Result<InspectAccess> {
    if text.trim().eq_ignore_ascii_case("any") {
        return Ok(InspectAccess::Any);
    }
    let ips = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<IpAddr>().with_context(|| format!("invalid inspect-allow address {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    if ips.is_empty() {
        bail!("inspect-allow needs at least one address or `any`");
    }
    Ok(InspectAccess::Only(ips))
}

/// Expands a leading `~/` to the home directory.
pub fn expand(path: &Path) -> PathBuf {
    match (path.strip_prefix("~"), std::env::var_os("HOME")) {
        (Ok(rest), Some(home)) => PathBuf::from(home).join(rest),
        _ => path.to_path_buf(),
    }
}

/// Which component a `--listen` flag applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Store,
    Pdp,
    Pep,
}

impl GlobalConfig {
    /// Loads the config file named by `args` (if any) and resolves.
    pub fn load(args: &GlobalArgs, serving: Option<Component>) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(&expand(p))?,
            None => FileConfig::default(),
        };
        Self::resolve(args, &file, serving)
    }

    pub fn resolve(args: &GlobalArgs, file: &FileConfig, serving: Option<Component>) -> Result<Self> {
        let pick = |flag: &Option<String>, file: &Option<String>| flag.clone().or_else(|| file.clone());
        let store_url = parse_url("store URL", &pick(&args.store_url, &file.store_url).unwrap_or(DEFAULT_STORE_URL.into()))?;
        let pdp_url = pick(&args.pdp_url, &file.pdp_url).map(|u| parse_url("PDP URL", &u)).transpose()?;

        let listen_for = |c: Component, from_file: &Option<String>, default: &str| -> Result<SocketAddr> {
            let text = match (&args.listen, serving) {
                (Some(flag), Some(s)) if s == c => flag.clone(),
                _ => from_file.clone().unwrap_or_else(|| default.to_string()),
            };
            parse_addr("listen", &text)
        };
        let listen = Listen {
            store: listen_for(Component::Store, &file.store_listen, DEFAULT_STORE_LISTEN)?,
            pdp: listen_for(Component::Pdp, &file.pdp_listen, DEFAULT_PDP_LISTEN)?,
            pep: listen_for(Component::Pep, &file.pep_listen, DEFAULT_PEP_LISTEN)?,
        };

        let path = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.as_ref().or(file.as_ref()).map(|p| expand(p));
        let cache_ttl = args
            .cache_ttl_ms
            .or(file.cache_ttl_ms)
            .map(Duration::from_millis)
            .unwrap_or(DEFAULT_TTL);
        let inspect_allow = match pick(&args.inspect_allow, &file.inspect_allow) {
            Some(text) => parse_access(&text)?,
            None => InspectAccess::loopback(),
        };
        Ok(GlobalConfig {
            store_url,
            pdp_url,
            listen,
            policy: path(&args.policy, &file.policy),
            schema: path(&args.schema, &file.schema),
            journal: path(&args.journal, &file.journal).unwrap_or_else(|| PathBuf::from(DEFAULT_JOURNAL)),
            flow_log: path(&args.flow_log, &file.flow_log),
            cache_ttl,
            inspect_allow,
        })
    }

    /// The store URL without a trailing slash, as the HTTP clients expect.
    pub fn store_base(&self) -> String {
        self.store_url.as_str().trim_end_matches('/').to_string()
    }

    pub fn policy_path(&self) -> Result<&Path> {
        self.policy.as_deref().context("no policy file configured (use --policy or LABELMESH_POLICY)")
    }

    pub fn schema_path(&self) -> Result<&Path> {
        self.schema.as_deref().context("no schema file configured (use --schema or LABELMESH_SCHEMA)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file() -> FileConfig {
        FileConfig {
            store_url: Some("http://store.internal:9000".into()),
            pdp_listen: Some("0.0.0.0:7000".into()),
            cache_ttl_ms: Some(250),
            journal: Some("/var/lib/lm/journal.tsv".into()),
            ..FileConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = GlobalConfig::resolve(&GlobalArgs::default(), &FileConfig::default(), None).unwrap();
        assert_eq!(c.store_url.as_str(), "http://127.0.0.1:8080/");
        assert_eq!(c.store_base(), "http://127.0.0.1:8080");
        assert_eq!(c.pdp_url, None);
        assert_eq!(c.cache_ttl, DEFAULT_TTL);
        assert_eq!(c.listen.pep, DEFAULT_PEP_LISTEN.parse().unwrap());
        assert_eq!(c.journal, PathBuf::from(DEFAULT_JOURNAL));
        assert_eq!(c.inspect_allow, InspectAccess::loopback());
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let c = GlobalConfig::resolve(&GlobalArgs::default(), &file(), None).unwrap();
        assert_eq!(c.store_url.host_str(), Some("store.internal"));
        assert_eq!(c.cache_ttl, Duration::from_millis(250));
        assert_eq!(c.listen.pdp, "0.0.0.0:7000".parse().unwrap());

        let args = GlobalArgs {
            store_url: Some("http://10.0.0.2:8080".into()),
            cache_ttl_ms: Some(0),
            listen: Some("127.0.0.1:9999".into()),
            ..GlobalArgs::default()
        };
        let c = GlobalConfig::resolve(&args, &file(), Some(Component::Pdp)).unwrap();
        assert_eq!(c.store_url.host_str(), Some("10.0.0.2"));
        assert_eq!(c.cache_ttl, Duration::ZERO);
        assert_eq!(c.listen.pdp, "127.0.0.1:9999".parse().unwrap());
        // --listen only applies to the component being served
        assert_eq!(c.listen.store, DEFAULT_STORE_LISTEN.parse().unwrap());
        assert_eq!(c.journal, PathBuf::from("/var/lib/lm/journal.tsv"));
    }

    #[test]
    fn bad_values_rejected() {
        let bad = |args: GlobalArgs| GlobalConfig::resolve(&args, &FileConfig::default(), Some(Component::Store)).is_err();
        assert!(bad(GlobalArgs { store_url: Some("not a url".into()), ..Default::default() }));
        assert!(bad(GlobalArgs { pdp_url: Some("ftp://x".into()), ..Default::default() }));
        assert!(bad(GlobalArgs { listen: Some("localhost".into()), ..Default::default() }));
        assert!(bad(GlobalArgs { inspect_allow: Some("10.0.0.1,nope".into()), ..Default::default() }));
    }

    #[test]
    fn inspect_allow_forms() {
        assert_eq!(parse_access("any").unwrap(), InspectAccess::Any);
        let a = parse_access("10.0.0.5, ::1").unwrap();
        assert!(a.permits("10.0.0.5".parse().unwrap()) && !a.permits("127.0.0.1".parse().unwrap()));
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("store_urll = \"x\"").is_err());
        let f: FileConfig = toml::from_str("cache_ttl_ms = 10\npolicy = \"p.policy\"").unwrap();
        assert_eq!(f.cache_ttl_ms, Some(10));
    }

    #[test]
    fn tilde_expansion() {
        if let Some(home) = std::env::var_os("HOME") {
            assert_eq!(expand(Path::new("~/j.tsv")), PathBuf::from(home).join("j.tsv"));
        }
        assert_eq!(expand(Path::new("/abs/j.tsv")), PathBuf::from("/abs/j.tsv"));
    }
}
