//! Fabric graph model: hosts, programmable edge switches, and stateless
//! core switches joined by capacitated, delayed, buffered links.
//!
//! Core switches carry the modulus used by the residue forwarding rule, so
//! the topology layer is also where the routing preconditions are checked:
//! moduli pairwise coprime, every used port index below its switch modulus.
//! Paths resolve to per-hop `(modulus, egress port)` constraints, and
//! migration candidates come from equal-length path enumeration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::residue::{
    crt_solve, gcd, CoreSwitchId, ResidueConstraint, ResidueError, RouteId, ROUTE_ID_BITS,
};

pub type NodeIdx = usize;
pub type PortNo = u64;
pub type EgressIdx = usize;

/// Maximum core-hop count considered by path enumeration.
pub const DEFAULT_MAX_CORE_HOPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    EdgeSwitch,
    CoreSwitch { modulus: u64 },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_core(&self) -> bool {
        matches!(self.kind, NodeKind::CoreSwitch { .. })
    }

    pub fn modulus(&self) -> Option<u64> {
        match self.kind {
            NodeKind::CoreSwitch { modulus } => Some(modulus),
            _ => None,
        }
    }
}

/// Bidirectional link; each direction gets its own egress queue state.
#[derive(Debug, Clone)]
pub struct Link {
    pub a: (NodeIdx, PortNo),
    pub b: (NodeIdx, PortNo),
    pub capacity_bps: u64,
    pub delay_ns: u64,
    pub buffer_pkts: u32,
}

/// One direction of a link, denormalized for the forwarding hot path.
#[derive(Debug, Clone)]
pub struct Egress {
    pub link: usize,
    pub from: NodeIdx,
    pub from_port: PortNo,
    pub to: NodeIdx,
    pub to_port: PortNo,
    pub capacity_bps: u64,
    pub delay_ns: u64,
    pub buffer_pkts: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate node name {0}")]
    DuplicateName(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("port {port} on {node} is already linked")]
    PortInUse { node: String, port: PortNo },
    #[error("link capacity must be positive")]
    ZeroCapacity,
    #[error("link buffer must hold at least one packet")]
    ZeroBuffer,
    #[error("cannot link {0} to itself")]
    SelfLink(String),
}

/// A single validation failure; a report may carry several.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    InvalidModulus { node: String, modulus: u64 },
    ModuliShareFactor { a: String, b: String, factor: u64 },
    PortExceedsModulus { node: String, port: PortNo, modulus: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidModulus { node, modulus } => {
                write!(f, "core {node}: modulus {modulus} must be at least 2")
            }
            Violation::ModuliShareFactor { a, b, factor } => {
                write!(f, "cores {a} and {b}: moduli share factor {factor}")
            }
            Violation::PortExceedsModulus { node, port, modulus } => {
                write!(
                    f,
                    "core {node}: port {port} in use but modulus {modulus} requires ports below it"
                )
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("no link between {from} and {to}")]
    UnknownLink { from: String, to: String },
    #[error("no link at {node} port {port}")]
    UnknownPort { node: String, port: PortNo },
    #[error("{0} is not a core switch")]
    NotACore(String),
    #[error("{0} is not a host")]
    NotAHost(String),
    #[error("host {0} is not attached to an edge switch")]
    HostNotAttached(String),
    #[error("path repeats node {0}")]
    RepeatedNode(String),
    #[error(transparent)]
    Residue(#[from] ResidueError),
}

/// A host-to-host path: the edges rewrite, the listed core hops forward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub src_host: NodeIdx,
    pub src_edge: NodeIdx,
    /// Core switch and the egress port taken out of it, in travel order.
    pub core_hops: Vec<(NodeIdx, PortNo)>,
    pub dst_edge: NodeIdx,
    pub dst_host: NodeIdx,
}

#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: Vec<Node>,
    by_name: BTreeMap<String, NodeIdx>,
    links: Vec<Link>,
    egresses: Vec<Egress>,
    /// Per node: port number to egress index, sorted by port.
    ports: Vec<BTreeMap<PortNo, EgressIdx>>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_node(&mut self, name: &str, kind: NodeKind) -> Result<NodeIdx, TopologyError> {
        if self.by_name.contains_key(name) {
            return Err(TopologyError::DuplicateName(name.to_string()));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
        });
        self.by_name.insert(name.to_string(), idx);
        self.ports.push(BTreeMap::new());
        Ok(idx)
    }

    pub fn add_host(&mut self, name: &str) -> Result<NodeIdx, TopologyError> {
        self.add_node(name, NodeKind::Host)
    }

    pub fn add_edge_switch(&mut self, name: &str) -> Result<NodeIdx, TopologyError> {
        self.add_node(name, NodeKind::EdgeSwitch)
    }

    pub fn add_core_switch(&mut self, name: &str, modulus: u64) -> Result<NodeIdx, TopologyError> {
        self.add_node(name, NodeKind::CoreSwitch { modulus })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_link(
        &mut self,
        a: &str,
        a_port: PortNo,
        b: &str,
        b_port: PortNo,
        capacity_bps: u64,
        delay_ns: u64,
        buffer_pkts: u32,
    ) -> Result<usize, TopologyError> {
        if capacity_bps == 0 {
            return Err(TopologyError::ZeroCapacity);
        }
        if buffer_pkts == 0 {
            return Err(TopologyError::ZeroBuffer);
        }
        let ai = self.node_idx(a).ok_or_else(|| TopologyError::UnknownNode(a.into()))?;
        let bi = self.node_idx(b).ok_or_else(|| TopologyError::UnknownNode(b.into()))?;
        if ai == bi {
            return Err(TopologyError::SelfLink(a.into()));
        }
        if self.ports[ai].contains_key(&a_port) {
            return Err(TopologyError::PortInUse { node: a.into(), port: a_port });
        }
        if self.ports[bi].contains_key(&b_port) {
            return Err(TopologyError::PortInUse { node: b.into(), port: b_port });
        }
        let link_idx = self.links.len();
        self.links.push(Link {
            a: (ai, a_port),
            b: (bi, b_port),
            capacity_bps,
            delay_ns,
            buffer_pkts,
        });
        for (from, from_port, to, to_port) in
            [(ai, a_port, bi, b_port), (bi, b_port, ai, a_port)]
        {
            let eg = self.egresses.len();
            self.egresses.push(Egress {
                link: link_idx,
                from,
                from_port,
                to,
                to_port,
                capacity_bps,
                delay_ns,
                buffer_pkts,
            });
            self.ports[from].insert(from_port, eg);
        }
        Ok(link_idx)
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx]
    }

    pub fn node_idx(&self, name: &str) -> Option<NodeIdx> {
        self.by_name.get(name).copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeIdx, &Node)> {
        self.nodes.iter().enumerate()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn egress(&self, idx: EgressIdx) -> &Egress {
        &self.egresses[idx]
    }

    pub fn egress_count(&self) -> usize {
        self.egresses.len()
    }

    /// Egress leaving `node` through `port`, if that port is linked.
    pub fn egress_at(&self, node: NodeIdx, port: PortNo) -> Option<EgressIdx> {
        self.ports[node].get(&port).copied()
    }

    /// Linked ports of a node in ascending port order.
    pub fn neighbors(&self, node: NodeIdx) -> impl Iterator<Item = (PortNo, &Egress)> {
        self.ports[node].iter().map(|(&p, &e)| (p, &self.egresses[e]))
    }

    /// Lowest-port egress from `from` whose far end is `to`.
    pub fn egress_toward(&self, from: NodeIdx, to: NodeIdx) -> Option<EgressIdx> {
        self.ports[from]
            .values()
            .copied()
            .find(|&e| self.egresses[e].to == to)
    }

    /// The edge switch a host hangs off (lowest-port attachment wins).
    pub fn edge_of_host(&self, host: NodeIdx) -> Option<NodeIdx> {
        self.ports[host]
            .values()
            .map(|&e| self.egresses[e].to)
            .find(|&n| self.nodes[n].kind == NodeKind::EdgeSwitch)
    }

    /// Checks the residue-routing preconditions over the whole graph.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let cores: Vec<(NodeIdx, u64)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.modulus().map(|m| (i, m)))
            .collect();
        for &(idx, m) in &cores {
            if m < 2 {
                violations.push(Violation::InvalidModulus {
                    node: self.nodes[idx].name.clone(),
                    modulus: m,
                });
            }
            for &port in self.ports[idx].keys() {
                if port >= m {
                    violations.push(Violation::PortExceedsModulus {
                        node: self.nodes[idx].name.clone(),
                        port,
                        modulus: m,
                    });
                }
            }
        }
        for (i, &(ia, ma)) in cores.iter().enumerate() {
            for &(ib, mb) in &cores[i + 1..] {
                let g = gcd(ma, mb);
                if g != 1 {
                    violations.push(Violation::ModuliShareFactor {
                        a: self.nodes[ia].name.clone(),
                        b: self.nodes[ib].name.clone(),
                        factor: g,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Builds a [`Path`] from its hosts and the core switches in travel
    /// order, deriving edges and egress ports from the link map.
    pub fn make_path(
        &self,
        src_host: NodeIdx,
        cores: &[NodeIdx],
        dst_host: NodeIdx,
    ) -> Result<Path, PathError> {
        for &h in [src_host, dst_host].iter() {
            if self.nodes[h].kind != NodeKind::Host {
                return Err(PathError::NotAHost(self.nodes[h].name.clone()));
            }
        }
        let src_edge = self
            .edge_of_host(src_host)
            .ok_or_else(|| PathError::HostNotAttached(self.nodes[src_host].name.clone()))?;
        let dst_edge = self
            .edge_of_host(dst_host)
            .ok_or_else(|| PathError::HostNotAttached(self.nodes[dst_host].name.clone()))?;
        let mut seen = BTreeSet::new();
        for &c in cores {
            if !self.nodes[c].is_core() {
                return Err(PathError::NotACore(self.nodes[c].name.clone()));
            }
            if !seen.insert(c) {
                return Err(PathError::RepeatedNode(self.nodes[c].name.clone()));
            }
        }
        if cores.is_empty() {
            if src_edge != dst_edge {
                return Err(PathError::UnknownLink {
                    from: self.nodes[src_edge].name.clone(),
                    to: self.nodes[dst_edge].name.clone(),
                });
            }
            return Ok(Path {
                src_host,
                src_edge,
                core_hops: Vec::new(),
                dst_edge,
                dst_host,
            });
        }
        if self.egress_toward(src_edge, cores[0]).is_none() {
            return Err(PathError::UnknownLink {
                from: self.nodes[src_edge].name.clone(),
                to: self.nodes[cores[0]].name.clone(),
            });
        }
        let mut core_hops = Vec::with_capacity(cores.len());
        for (i, &c) in cores.iter().enumerate() {
            let next = if i + 1 < cores.len() { cores[i + 1] } else { dst_edge };
            let eg = self.egress_toward(c, next).ok_or_else(|| PathError::UnknownLink {
                from: self.nodes[c].name.clone(),
                to: self.nodes[next].name.clone(),
            })?;
            core_hops.push((c, self.egresses[eg].from_port));
        }
        Ok(Path {
            src_host,
            src_edge,
            core_hops,
            dst_edge,
            dst_host,
        })
    }

    /// The same path traveled backwards, with egress ports re-derived for
    /// the reverse direction.
    pub fn reverse_path(&self, path: &Path) -> Result<Path, PathError> {
        let cores: Vec<NodeIdx> = path.core_hops.iter().rev().map(|&(c, _)| c).collect();
        self.make_path(path.dst_host, &cores, path.src_host)
    }

    /// One residue constraint per core hop, in path order. Verifies each
    /// hop is physically linked to the next before trusting its port.
    pub fn path_to_constraints(&self, path: &Path) -> Result<Vec<ResidueConstraint>, PathError> {
        self.check_path_links(path)?;
        let mut constraints = Vec::with_capacity(path.core_hops.len());
        for &(core, port) in &path.core_hops {
            let modulus = self.nodes[core]
                .modulus()
                .ok_or_else(|| PathError::NotACore(self.nodes[core].name.clone()))?;
            let switch = CoreSwitchId::new(modulus)?;
            constraints.push(ResidueConstraint::new(switch, port)?);
        }
        Ok(constraints)
    }

    fn check_path_links(&self, path: &Path) -> Result<(), PathError> {
        let hop_err = |from: NodeIdx, to: NodeIdx| PathError::UnknownLink {
            from: self.nodes[from].name.clone(),
            to: self.nodes[to].name.clone(),
        };
        if self.egress_toward(path.src_host, path.src_edge).is_none() {
            return Err(hop_err(path.src_host, path.src_edge));
        }
        if self.egress_toward(path.dst_edge, path.dst_host).is_none() {
            return Err(hop_err(path.dst_edge, path.dst_host));
        }
        if path.core_hops.is_empty() {
            if path.src_edge != path.dst_edge {
                return Err(hop_err(path.src_edge, path.dst_edge));
            }
            return Ok(());
        }
        if self.egress_toward(path.src_edge, path.core_hops[0].0).is_none() {
            return Err(hop_err(path.src_edge, path.core_hops[0].0));
        }
        for (i, &(core, port)) in path.core_hops.iter().enumerate() {
            let next = if i + 1 < path.core_hops.len() {
                path.core_hops[i + 1].0
            } else {
                path.dst_edge
            };
            match self.egress_at(core, port) {
                Some(e) if self.egresses[e].to == next => {}
                Some(_) | None => return Err(hop_err(core, next)),
            }
        }
        Ok(())
    }

    /// Route identifier for a path: the CRT solution of its constraints.
    /// Paths with no core hops use identifier 0 by convention.
    pub fn route_id_for_path(&self, path: &Path) -> Result<RouteId, PathError> {
        let constraints = self.path_to_constraints(path)?;
        if constraints.is_empty() {
            return Ok(RouteId::ZERO);
        }
        Ok(crt_solve(&constraints)?)
    }

    /// All loop-free paths between the edges with the same core-hop count
    /// as `current`, excluding `current`, sorted by core modulus sequence
    /// (ports break ties). Candidates whose moduli cannot form a route id
    /// are silently skipped.
    pub fn enumerate_equal_length_paths(
        &self,
        src_edge: NodeIdx,
        dst_edge: NodeIdx,
        current: &Path,
        max_core_hops: usize,
    ) -> Vec<Path> {
        let target = current.core_hops.len();
        if target == 0 || target > max_core_hops {
            return Vec::new();
        }
        let start_cores: BTreeSet<NodeIdx> = self
            .ports[src_edge]
            .values()
            .map(|&e| self.egresses[e].to)
            .filter(|&n| self.nodes[n].is_core())
            .collect();
        let mut found: Vec<Vec<(NodeIdx, PortNo)>> = Vec::new();
        let mut visited = BTreeSet::new();
        let mut hops = Vec::with_capacity(target);
        for &start in &start_cores {
            visited.insert(start);
            self.dfs_paths(start, dst_edge, target, &mut visited, &mut hops, &mut found);
            visited.remove(&start);
        }
        let mut paths: Vec<Path> = found
            .into_iter()
            .filter(|hops| hops != &current.core_hops)
            .filter(|hops| self.route_space_fits(hops))
            .map(|core_hops| Path {
                src_host: current.src_host,
                src_edge,
                core_hops,
                dst_edge,
                dst_host: current.dst_host,
            })
            .collect();
        paths.sort_by_key(|p| {
            p.core_hops
                .iter()
                .map(|&(c, port)| (self.nodes[c].modulus().unwrap_or(0), port))
                .collect::<Vec<_>>()
        });
        paths
    }

    fn dfs_paths(
        &self,
        at: NodeIdx,
        dst_edge: NodeIdx,
        remaining: usize,
        visited: &mut BTreeSet<NodeIdx>,
        hops: &mut Vec<(NodeIdx, PortNo)>,
        found: &mut Vec<Vec<(NodeIdx, PortNo)>>,
    ) {
        if remaining == 1 {
            for (port, eg) in self.neighbors(at) {
                if eg.to == dst_edge {
                    hops.push((at, port));
                    found.push(hops.clone());
                    hops.pop();
                }
            }
            return;
        }
        for (port, eg) in self.neighbors(at) {
            let next = eg.to;
            if !self.nodes[next].is_core() || visited.contains(&next) {
                continue;
            }
            visited.insert(next);
            hops.push((at, port));
            self.dfs_paths(next, dst_edge, remaining - 1, visited, hops, found);
            hops.pop();
            visited.remove(&next);
        }
    }

    fn route_space_fits(&self, hops: &[(NodeIdx, PortNo)]) -> bool {
        let mut product: u128 = 1;
        let moduli: Vec<u64> = hops
            .iter()
            .filter_map(|&(c, _)| self.nodes[c].modulus())
            .collect();
        if moduli.len() != hops.len() {
            return false;
        }
        for (i, &m) in moduli.iter().enumerate() {
            if m < 2 {
                return false;
            }
            product *= m as u128;
            if product > (1u128 << ROUTE_ID_BITS) {
                return false;
            }
            for &other in &moduli[i + 1..] {
                if gcd(m, other) != 1 {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest link capacity along the whole host-to-host path.
    pub fn min_path_capacity(&self, path: &Path) -> Result<u64, PathError> {
        Ok(self
            .path_egresses(path)?
            .iter()
            .map(|&e| self.egresses[e].capacity_bps)
            .min()
            .unwrap_or(u64::MAX))
    }

    /// Every directed egress a packet crosses from source host to
    /// destination host, in travel order.
    pub fn path_egresses(&self, path: &Path) -> Result<Vec<EgressIdx>, PathError> {
        self.check_path_links(path)?;
        let mut out = Vec::with_capacity(path.core_hops.len() + 3);
        let hop_err = |from: NodeIdx, to: NodeIdx| PathError::UnknownLink {
            from: self.nodes[from].name.clone(),
            to: self.nodes[to].name.clone(),
        };
        out.push(
            self.egress_toward(path.src_host, path.src_edge)
                .ok_or_else(|| hop_err(path.src_host, path.src_edge))?,
        );
        if let Some(&(first_core, _)) = path.core_hops.first() {
            out.push(
                self.egress_toward(path.src_edge, first_core)
                    .ok_or_else(|| hop_err(path.src_edge, first_core))?,
            );
            for &(core, port) in &path.core_hops {
                out.push(self.egress_at(core, port).ok_or_else(|| PathError::UnknownPort {
                    node: self.nodes[core].name.clone(),
                    port,
                })?);
            }
        }
        out.push(
            self.egress_toward(path.dst_edge, path.dst_host)
                .ok_or_else(|| hop_err(path.dst_edge, path.dst_host))?,
        );
        Ok(out)
    }

    /// Human-readable path rendering, e.g. `VMS1->S11->S19->S17->VMD2`.
    pub fn format_path(&self, path: &Path) -> String {
        let mut parts = vec![self.nodes[path.src_host].name.as_str()];
        for &(c, _) in &path.core_hops {
            parts.push(self.nodes[c].name.as_str());
        }
        parts.push(self.nodes[path.dst_host].name.as_str());
        parts.join("->")
    }
}
