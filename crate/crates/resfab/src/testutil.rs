//! Shared fixtures for the crate's unit tests.

use crate::dataplane::RoutedPath;
use crate::topology::{NodeIdx, Topology};

pub const GBPS10: u64 = 10_000_000_000;
pub const MBPS930: u64 = 930_000_000;
pub const LINK_DELAY_NS: u64 = 50_000;

/// The built-in four-core fabric: two hosts per edge, edges E1/E2, cores
/// S11/S13/S17/S19 wired so the primary path VMS1->S11->S19->S17->VMD2
/// resolves to route id 133.
pub fn fig_topology() -> Topology {
    let mut t = Topology::new();
    t.add_core_switch("S11", 11).unwrap();
    t.add_core_switch("S13", 13).unwrap();
    t.add_core_switch("S17", 17).unwrap();
    t.add_core_switch("S19", 19).unwrap();
    t.add_edge_switch("E1").unwrap();
    t.add_edge_switch("E2").unwrap();
    for h in ["VMS1", "VMS2", "VMD1", "VMD2"] {
        t.add_host(h).unwrap();
    }
    t.add_link("VMS1", 0, "E1", 0, GBPS10, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("VMS2", 0, "E1", 1, GBPS10, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("E1", 2, "S11", 0, GBPS10, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("S11", 1, "S19", 1, MBPS930, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("S11", 2, "S13", 1, MBPS930, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("S19", 0, "S17", 0, MBPS930, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("S13", 0, "S17", 1, MBPS930, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("S17", 14, "E2", 2, GBPS10, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("E2", 0, "VMD1", 0, GBPS10, LINK_DELAY_NS, 1000).unwrap();
    t.add_link("E2", 1, "VMD2", 0, GBPS10, LINK_DELAY_NS, 1000).unwrap();
    t
}

/// Three parallel one-hop core paths between the same pair of edges.
pub fn diamond_topology() -> Topology {
    let mut t = Topology::new();
    t.add_core_switch("C11", 11).unwrap();
    t.add_core_switch("C13", 13).unwrap();
    t.add_core_switch("C19", 19).unwrap();
    t.add_edge_switch("E1").unwrap();
    t.add_edge_switch("E2").unwrap();
    t.add_host("A").unwrap();
    t.add_host("B").unwrap();
    t.add_link("A", 0, "E1", 0, GBPS10, LINK_DELAY_NS, 10).unwrap();
    t.add_link("B", 0, "E2", 0, GBPS10, LINK_DELAY_NS, 10).unwrap();
    for (i, c) in ["C11", "C13", "C19"].iter().enumerate() {
        t.add_link("E1", 1 + i as u64, c, 0, GBPS10, LINK_DELAY_NS, 10).unwrap();
        t.add_link(c, 1, "E2", 1 + i as u64, GBPS10, LINK_DELAY_NS, 10).unwrap();
    }
    t
}

/// Builds a routed path from host and core names.
pub fn routed(t: &Topology, src: &str, cores: &[&str], dst: &str) -> RoutedPath {
    let cores: Vec<NodeIdx> = cores.iter().map(|c| t.node_idx(c).unwrap()).collect();
    let path = t
        .make_path(t.node_idx(src).unwrap(), &cores, t.node_idx(dst).unwrap())
        .unwrap();
    let route = t.route_id_for_path(&path).unwrap();
    RoutedPath { path, route }
}
