//! Tracking policy file: per-label life-cycle, flow and geo rules.
//!
//! ```text
//! # CloudFlow
//! lifecycle personal delete_after=180d
//! lifecycle invoice retain_min=180d delete_after=365d
//! flow personal allow=hr-service
//! geo personal groups=EU
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Label, RegionGroup};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate {kind} rule for label {label}")]
    DuplicateRule {
        line: usize,
        kind: &'static str,
        label: String,
    },
    #[error("line {line}: retain_min ({retain_min}s) exceeds delete_after ({delete_after}s) for label {label}")]
    RetentionOrder {
        line: usize,
        label: String,
        retain_min: u64,
        delete_after: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleRule {
    pub label: Label,
    /// Minimum retention in seconds.
    pub retain_min: Option<u64>,
    /// Deletion deadline in seconds after the object's birth.
    pub delete_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub label: Label,
    pub allowed_workloads: BTreeSet<String>,
}

impl FlowRule {
    pub fn permits(&self, workload: &str) -> bool {
        self.allowed_workloads.contains(workload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoRule {
    pub label: Label,
    pub allowed_groups: BTreeSet<RegionGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrackingPolicy {
    pub lifecycle_rules: Vec<LifecycleRule>,
    pub flow_rules: Vec<FlowRule>,
    pub geo_rules: Vec<GeoRule>,
}

impl TrackingPolicy {
    pub fn lifecycle_for(&self, label: &Label) -> Option<&LifecycleRule> {
        self.lifecycle_rules.iter().find(|r| &r.label == label)
    }

    pub fn flow_for(&self, label: &Label) -> Option<&FlowRule> {
        self.flow_rules.iter().find(|r| &r.label == label)
    }

    pub fn geo_for(&self, label: &Label) -> Option<&GeoRule> {
        self.geo_rules.iter().find(|r| &r.label == label)
    }

    pub fn is_empty(&self) -> bool {
        self.lifecycle_rules.is_empty() && self.flow_rules.is_empty() && self.geo_rules.is_empty()
    }

    /// Canonical text form: one rule per line, durations in plain seconds.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for r in &self.lifecycle_rules {
            let _ = write!(out, "lifecycle {}", r.label);
            if let Some(v) = r.retain_min {
                let _ = write!(out, " retain_min={v}");
            }
            if let Some(v) = r.delete_after {
                let _ = write!(out, " delete_after={v}");
            }
            out.push('\n');
        }
        for r in &self.flow_rules {
            let ws: Vec<&str> = r.allowed_workloads.iter().map(String::as_str).collect();
            let _ = writeln!(out, "flow {} allow={}", r.label, ws.join(","));
        }
        for r in &self.geo_rules {
            let gs: Vec<&str> = r.allowed_groups.iter().map(RegionGroup::as_str).collect();
            let _ = writeln!(out, "geo {} groups={}", r.label, gs.join(","));
        }
        out
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.serialize().as_bytes());
        hash.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Parses a duration such as `15552000`, `180d`, `12h` or `30s` into seconds.
pub fn parse_duration(text: &str) -> Option<u64> {
    let (digits, unit) = match text.char_indices().last()? {
        (i, 's') => (&text[..i], 1),
        (i, 'h') => (&text[..i], 3_600),
        (i, 'd') => (&text[..i], 86_400),
        _ => (text, 1),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<u64>().ok()?.checked_mul(unit)
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                tokens.push(Token { text: &line[s..i], column: line[..s].chars().count() + 1 });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token { text: &line[s..], column: line[..s].chars().count() + 1 });
    }
    tokens
}

struct LineParser<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
    end_column: usize,
}

impl<'a> LineParser<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> PolicyError {
        PolicyError::Syntax { line: self.line, column, message: message.into() }
    }

    fn label(&self) -> Result<Label, PolicyError> {
        let tok = self
            .tokens
            .get(1)
            .ok_or_else(|| self.err(self.end_column, "expected label"))?;
        Label::new(tok.text).map_err(|e| self.err(tok.column, e.to_string()))
    }

    /// Splits `key=value` options after the label.
    fn options(&self) -> Result<Vec<(&'a str, &'a str, usize)>, PolicyError> {
        self.tokens[2..]
            .iter()
            .map(|t| match t.text.split_once('=') {
                Some((k, v)) => Ok((k, v, t.column + k.len() + 1)),
                None => Err(self.err(t.column, format!("expected key=value, found {:?}", t.text))),
            })
            .collect()
    }

    fn list(&self, value: &'a str, column: usize) -> Result<Vec<&'a str>, PolicyError> {
        let items: Vec<&str> = value.split(',').collect();
        if items.iter().any(|s| s.is_empty()) {
            return Err(self.err(column, "empty list element"));
        }
        Ok(items)
    }
}

/// Parses a policy file.
pub fn parse_policy(text: &str) -> Result<TrackingPolicy, PolicyError> {
    let mut policy = TrackingPolicy::default();
    for (idx, raw) in text.lines().enumerate() {
        let tokens = tokenize(raw);
        let Some(first) = tokens.first() else { continue };
        if first.text.starts_with('#') {
            continue;
        }
        let p = LineParser { line: idx + 1, end_column: raw.chars().count() + 1, tokens };
        let kind = p.tokens[0].text;
        match kind {
            "lifecycle" => {
                let label = p.label()?;
                let mut retain_min = None;
                let mut delete_after = None;
                for (key, value, col) in p.options()? {
                    let slot = match key {
                        "retain_min" => &mut retain_min,
                        "delete_after" => &mut delete_after,
                        other => {
                            return Err(p.err(col - key.len() - 1, format!("unknown lifecycle option {other:?}")))
                        }
                    };
                    if slot.is_some() {
                        return Err(p.err(col - key.len() - 1, format!("{key} given twice")));
                    }
                    *slot = Some(
                        parse_duration(value)
                            .ok_or_else(|| p.err(col, format!("invalid duration {value:?}")))?,
                    );
                }
                if retain_min.is_none() && delete_after.is_none() {
                    return Err(p.err(p.end_column, "lifecycle rule needs retain_min or delete_after"));
                }
                if let (Some(r), Some(d)) = (retain_min, delete_after) {
                    if r > d {
                        return Err(PolicyError::RetentionOrder {
                            line: p.line,
                            label: label.to_string(),
                            retain_min: r,
                            delete_after: d,
                        });
                    }
                }
                if policy.lifecycle_for(&label).is_some() {
                    return Err(PolicyError::DuplicateRule { line: p.line, kind: "lifecycle", label: label.to_string() });
                }
                policy.lifecycle_rules.push(LifecycleRule { label, retain_min, delete_after });
            }
            "flow" => {
                let label = p.label()?;
                let opts = p.options()?;
                let (value, col) = match opts.as_slice() {
                    [("allow", v, c)] => (*v, *c),
                    [] => return Err(p.err(p.end_column, "expected allow=<workloads>")),
                    [(k, _, c), ..] if *k != "allow" => {
                        return Err(p.err(c - k.len() - 1, format!("unknown flow option {k:?}")))
                    }
                    [_, (_, _, c), ..] => return Err(p.err(*c, "unexpected extra option")),
                    [..] => unreachable!(),
                };
                let allowed_workloads = p.list(value, col)?.into_iter().map(str::to_string).collect();
                if policy.flow_for(&label).is_some() {
                    return Err(PolicyError::DuplicateRule { line: p.line, kind: "flow", label: label.to_string() });
                }
                policy.flow_rules.push(FlowRule { label, allowed_workloads });
            }
            "geo" => {
                let label = p.label()?;
                let opts = p.options()?;
                let (value, col) = match opts.as_slice() {
                    [("groups", v, c)] => (*v, *c),
                    [] => return Err(p.err(p.end_column, "expected groups=<codes>")),
                    [(k, _, c), ..] if *k != "groups" => {
                        return Err(p.err(c - k.len() - 1, format!("unknown geo option {k:?}")))
                    }
                    [_, (_, _, c), ..] => return Err(p.err(*c, "unexpected extra option")),
                    [..] => unreachable!(),
                };
                let allowed_groups = p
                    .list(value, col)?
                    .into_iter()
                    .map(|g| RegionGroup::new(g).map_err(|e| p.err(col, e.to_string())))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                if policy.geo_for(&label).is_some() {
                    return Err(PolicyError::DuplicateRule { line: p.line, kind: "geo", label: label.to_string() });
                }
                policy.geo_rules.push(GeoRule { label, allowed_groups });
            }
            other => {
                return Err(p.err(p.tokens[0].column, format!("unknown rule kind {other:?}")));
            }
        }
    }
    Ok(policy)
}
