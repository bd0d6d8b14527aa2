//! Request-time enforcement: the decision point, the enforcing proxy, and
//! the flow log they share.

mod cache;
mod decide;
mod flowlog;
mod introspect;
mod pdp;
mod pep;

pub use cache::{DecisionCache, DEFAULT_CAPACITY, DEFAULT_TTL};
pub use decide::{
    evaluate, is_cacheable, AuthzRequest, PDP_UNAVAILABLE, PERMITTED, PIP_UNAVAILABLE, RESOURCE_NOT_FOUND,
    UNCLASSIFIED,
};
pub use flowlog::{flows_with_label, read_flow_log, FlowLog, FlowRecord};
pub use introspect::{HttpIntrospector, IntrospectError, Introspector, LocalIntrospector};
pub use pdp::{Pdp, PdpClient};
pub use pep::{strip_hop_by_hop, Authorizer, Pep, WORKLOAD_HEADER};

pub mod server {
    //! Router and serve functions for both services.
    pub use super::pdp::{router as pdp_router, serve as serve_pdp};
    pub use super::pep::{router as pep_router, serve as serve_pep};
}
