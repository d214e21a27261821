//! Deterministic packet-level simulation of a data-center fabric that
//! routes in the core by residue arithmetic over strict source routes and
//! rebalances load by migrating elephant flows with edge-only rule changes.

pub mod controller;
pub mod dataplane;
pub mod residue;
pub mod scenario;
#[cfg(test)]
pub(crate) mod testutil;
pub mod topology;
pub mod traffic;
pub mod units;

pub use controller::{ControllerParams, FlowClass};
pub use dataplane::{Conservation, Simulation};
pub use residue::{
    crt_solve, decode_route_field, encode_route_field, mod_inverse, modulo_forward, CoreSwitchId,
    ResidueConstraint, ResidueError, RouteId, MAX_ROUTE_ID,
};
pub use scenario::{
    builtin_scenario_text, parse_scenario, run_experiment, scenario_to_text, Builtin, Scenario,
};
pub use topology::{
    Egress, EgressIdx, Link, Node, NodeIdx, NodeKind, Path, PathError, PortNo, Topology,
    TopologyError, ValidationReport, Violation, DEFAULT_MAX_CORE_HOPS,
};
