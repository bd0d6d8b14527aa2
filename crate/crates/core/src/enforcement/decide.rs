use serde::{Deserialize, Serialize};

use super::introspect::IntrospectError;
use crate::model::{Decision, Label, LabelSet, ModelError, ResourceRef, Verdict};
use crate::policy::TrackingPolicy;

/// Reason given when the resource does not exist.
pub const RESOURCE_NOT_FOUND: &str = "resource-not-found";
/// Reason given when labels could not be fetched.
pub const PIP_UNAVAILABLE: &str = "pip-unavailable";
/// Reason given by the PEP when the PDP could not be reached.
pub const PDP_UNAVAILABLE: &str = "pdp-unavailable";
pub const UNCLASSIFIED: &str = "unclassified";
pub const PERMITTED: &str = "permitted";

/// A workload asking to read `resource` (`bucket/key`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthzRequest {
    pub workload: String,
    pub resource: String,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_method() -> String {
    "GET".to_string()
}

impl AuthzRequest {
    pub fn new(workload: impl Into<String>, resource: impl Into<String>, method: impl Into<String>) -> Self {
        AuthzRequest { workload: workload.into(), resource: resource.into(), method: method.into() }
    }

    pub fn validate(&self) -> Result<ResourceRef, ModelError> {
        if self.workload.trim().is_empty() {
            return Err(ModelError::InvalidResource(format!("empty workload for {}", self.resource)));
        }
        ResourceRef::parse(&self.resource)
    }
}

/// Verdict for `request` given the outcome of label introspection.
///
/// Unlabeled resources pass. Otherwise every label carrying a flow rule
/// must admit the workload; labels without a rule impose nothing. Failed
/// introspection denies.
pub fn evaluate(
    request: &AuthzRequest,
    policy: &TrackingPolicy,
    labels: Result<LabelSet, IntrospectError>,
) -> Decision {
    let workload = request.workload.clone();
    let labels = match labels {
        Ok(labels) => labels,
        Err(e) => {
            let reason = match e {
                IntrospectError::NotFound => RESOURCE_NOT_FOUND,
                IntrospectError::Unavailable(_) => PIP_UNAVAILABLE,
            };
            return Decision {
                verdict: Verdict::Deny,
                reason: reason.to_string(),
                labels_seen: LabelSet::new(),
                workload,
                denied_by: Vec::new(),
            };
        }
    };
    if labels.is_empty() {
        return Decision {
            verdict: Verdict::Allow,
            reason: UNCLASSIFIED.to_string(),
            labels_seen: labels,
            workload,
            denied_by: Vec::new(),
        };
    }
    let denied_by: Vec<Label> = labels
        .iter()
        .filter(|l| policy.flow_for(l).is_some_and(|r| !r.permits(&request.workload)))
        .cloned()
        .collect();
    if denied_by.is_empty() {
        Decision { verdict: Verdict::Allow, reason: PERMITTED.to_string(), labels_seen: labels, workload, denied_by }
    } else {
        let names: Vec<&str> = denied_by.iter().map(Label::as_str).collect();
        let reason = if names.len() == 1 {
            format!("label {} does not permit workload {}", names[0], request.workload)
        } else {
            format!("labels {} do not permit workload {}", names.join(","), request.workload)
        };
        Decision { verdict: Verdict::Deny, reason, labels_seen: labels, workload, denied_by }
    }
}

/// Whether a decision reflects the resource's labels rather than a lookup failure.
pub fn is_cacheable(decision: &Decision) -> bool {
    !matches!(decision.reason.as_str(), RESOURCE_NOT_FOUND | PIP_UNAVAILABLE | PDP_UNAVAILABLE)
}
