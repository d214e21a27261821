//! Deterministic discrete-event dataplane.
//!
//! Packets move host -> source edge -> core switches -> destination edge
//! -> host. The source edge rewrites the 6-octet source-address field with
//! the flow's route identifier, every core switch forwards by reducing
//! that identifier modulo its own switch id, and the destination edge
//! restores the original address before delivery. Links are modeled as
//! drop-tail FIFO queues with serialization and propagation delay.
//!
//! Every state change happens inside an event with a `(time, order)` key,
//! so identical inputs replay identical runs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use thiserror::Error;

use crate::controller::{
    handle_poll, scripted_migrate, ControllerParams, ControllerState, FlowRecord,
};
use crate::residue::{decode_route_field, encode_route_field, RouteId};
use crate::topology::{EgressIdx, NodeIdx, NodeKind, Path, PathError, PortNo, Topology};
use crate::traffic::{FlowIdx, FlowSpec, LossCause, Metrics};
use crate::units::{serialization_ns, TimeNs};

/// Safety bound on the pending event count.
pub const DEFAULT_MAX_PENDING_EVENTS: usize = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    Data,
    ProbeRequest,
    ProbeReply,
}

/// Travel direction relative to the flow definition. Probe replies are the
/// only reverse-direction packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dir {
    Forward,
    Reverse,
}

impl PacketKind {
    pub fn dir(self) -> Dir {
        match self {
            PacketKind::ProbeReply => Dir::Reverse,
            _ => Dir::Forward,
        }
    }
}

/// Simulated frame. `src_field` is the rewritable address slot that
/// carries the route identifier through the core; the original source
/// stays in the packet record the way the restore rule remembers it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowIdx,
    pub kind: PacketKind,
    pub seq: u64,
    pub size: u32,
    pub src_field: [u8; 6],
    pub original_src: [u8; 6],
    pub dst_field: [u8; 6],
    pub created_at: TimeNs,
}

/// Deterministic locally-administered pseudo-address for a host. Never
/// all-zero, so a raw host address can't collide with route id 0.
pub fn host_address(host: NodeIdx) -> [u8; 6] {
    let b = (host as u32 + 1).to_be_bytes();
    [0x02, 0x00, b[0], b[1], b[2], b[3]]
}

/// A path together with its synthesized route identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedPath {
    pub path: Path,
    pub route: RouteId,
}

/// Edge rules installed for a flow at registration time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub fwd: RoutedPath,
    /// Present for probe flows: the reply direction, installed symmetrically.
    pub rev: Option<RoutedPath>,
}

/// Source-edge rule: stamp the route id and push the packet to the uplink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngressRule {
    pub route: RouteId,
    /// Intra-edge paths need no route id and keep the original field.
    pub rewrite: bool,
    pub out_port: PortNo,
    pub out_egress: EgressIdx,
    pub installed_at: TimeNs,
}

/// Destination-edge rule: put the remembered source address back and hand
/// the packet to the host port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoreRule {
    pub original: [u8; 6],
    pub out_port: PortNo,
    pub out_egress: EgressIdx,
    pub installed_at: TimeNs,
}

#[derive(Debug, Clone, Default)]
pub struct EdgeTable {
    pub ingress: BTreeMap<(FlowIdx, Dir), IngressRule>,
    pub restore: BTreeMap<(FlowIdx, Dir, u64), RestoreRule>,
    pub unmatched: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleOpKind {
    InstallIngress,
    InstallRestore,
    RemoveIngress,
    RemoveRestore,
}

impl RuleOpKind {
    pub fn is_install(self) -> bool {
        matches!(self, RuleOpKind::InstallIngress | RuleOpKind::InstallRestore)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleReason {
    Register,
    Migrate,
    DrainExpire,
}

/// One applied rule-table change. Core switches never appear here: they
/// have no tables to change.
#[derive(Debug, Clone)]
pub struct RuleLogEntry {
    pub time: TimeNs,
    pub node: NodeIdx,
    pub op: RuleOpKind,
    pub reason: RuleReason,
    pub flow: FlowIdx,
    pub route: u64,
}

#[derive(Debug, Clone)]
pub enum RuleOp {
    InstallIngress {
        flow: FlowIdx,
        dir: Dir,
        rule: IngressRule,
        /// A migrating flow's record moves to the new path when the source
        /// rule flips.
        commit_path: Option<RoutedPath>,
    },
    InstallRestore {
        flow: FlowIdx,
        dir: Dir,
        route: u64,
        rule: RestoreRule,
    },
    RemoveIngress {
        flow: FlowIdx,
        dir: Dir,
    },
    RemoveRestore {
        flow: FlowIdx,
        dir: Dir,
        route: u64,
    },
}

#[derive(Debug, Clone)]
pub enum EventKind {
    FlowTimer { flow: FlowIdx },
    Arrival { node: NodeIdx, packet: Packet },
    DequeueComplete { egress: EgressIdx },
    RuleChange { edge: NodeIdx, reason: RuleReason, op: RuleOp },
    StatsPoll,
    Register { flow: FlowIdx, registration: Registration },
    ScriptedMigrate { flow: FlowIdx, new: RoutedPath },
    SetAutoBalance { on: bool },
}

#[derive(Debug)]
struct Event {
    time: TimeNs,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.order == other.order
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap pops the earliest (time, order) first.
        (other.time, other.order).cmp(&(self.time, self.order))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("pending event count exceeded the safety bound of {0}")]
    EventOverflow(usize),
    #[error("route id does not match the migration target path")]
    RouteMismatch,
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    next_order: u64,
    max_pending: usize,
}

impl EventQueue {
    fn schedule(&mut self, time: TimeNs, kind: EventKind) -> Result<(), SimError> {
        if self.heap.len() >= self.max_pending {
            return Err(SimError::EventOverflow(self.max_pending));
        }
        let order = self.next_order;
        self.next_order += 1;
        self.heap.push(Event { time, order, kind });
        Ok(())
    }

    fn pop_through(&mut self, t_end: TimeNs) -> Option<Event> {
        if self.heap.peek().map(|e| e.time <= t_end).unwrap_or(false) {
            self.heap.pop()
        } else {
            None
        }
    }

    /// Packets parked in pending arrival events (on the wire).
    fn packets_in_flight(&self) -> u64 {
        self.heap
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Arrival { .. }))
            .count() as u64
    }
}

/// Per-direction egress queue: drop-tail FIFO plus serializer state.
#[derive(Debug, Clone, Default)]
pub struct EgressState {
    fifo: VecDeque<Packet>,
    busy_until: TimeNs,
    /// Reset by the controller on every poll.
    pub window_bytes: u64,
    pub window_drops: u64,
    pub total_bytes: u64,
    pub total_drops: u64,
}

impl EgressState {
    pub fn occupancy(&self) -> usize {
        self.fifo.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub generated: u64,
    pub delivered: u64,
    pub delivered_bits: u64,
    pub droptail: u64,
    pub unmatched: u64,
    pub misroute: u64,
    pub out_of_order: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LatencyStat {
    pub count: u64,
    pub sum_ns: u128,
    pub min_ns: TimeNs,
    pub max_ns: TimeNs,
}

impl LatencyStat {
    fn record(&mut self, latency: TimeNs) {
        if self.count == 0 || latency < self.min_ns {
            self.min_ns = latency;
        }
        if latency > self.max_ns {
            self.max_ns = latency;
        }
        self.count += 1;
        self.sum_ns += latency as u128;
    }

    pub fn mean_ns(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ns as f64 / self.count as f64
        }
    }
}

/// Runtime state of one flow: its spec, its installed routes, and the
/// classifier's view of it.
#[derive(Debug, Clone)]
pub struct FlowRuntime {
    pub spec: FlowSpec,
    pub registration: Option<Registration>,
    pub next_seq: u64,
    pub src_uplink: EgressIdx,
    pub dst_uplink: EgressIdx,
    pub counters: FlowCounters,
    pub latency: LatencyStat,
    pub record: FlowRecord,
    last_delivered_seq: Option<u64>,
    /// While set, unmatched drops inside the window are charged to the
    /// migration at this index.
    pub(crate) blackhole_window: Option<(TimeNs, TimeNs, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Totals {
    pub generated: u64,
    pub delivered: u64,
    pub droptail: u64,
    pub unmatched: u64,
    pub misroute: u64,
}

/// Snapshot of the packet-conservation ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conservation {
    pub generated: u64,
    pub delivered: u64,
    pub droptail: u64,
    pub unmatched: u64,
    pub misroute: u64,
    /// Independently counted: queued packets plus packets on the wire.
    pub in_flight: u64,
}

impl Conservation {
    pub fn balanced(&self) -> bool {
        self.generated
            == self.delivered + self.droptail + self.unmatched + self.misroute + self.in_flight
    }
}

/// Pre-resolved scenario events handed to the simulation at build time.
#[derive(Debug, Clone)]
pub enum ScriptedEvent {
    Register {
        at: TimeNs,
        flow: FlowIdx,
        registration: Registration,
    },
    Migrate {
        at: TimeNs,
        flow: FlowIdx,
        new: RoutedPath,
    },
    AutoBalance {
        at: TimeNs,
        on: bool,
    },
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("topology failed validation: {0}")]
    InvalidTopology(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub struct Simulation {
    pub(crate) topo: Topology,
    pub(crate) params: ControllerParams,
    pub(crate) duration_ns: TimeNs,
    pub(crate) now: TimeNs,
    events: EventQueue,
    pub(crate) egress_state: Vec<EgressState>,
    pub(crate) edge_tables: BTreeMap<NodeIdx, EdgeTable>,
    pub(crate) flows: Vec<FlowRuntime>,
    pub(crate) metrics: Metrics,
    pub(crate) totals: Totals,
    pub(crate) ctl: ControllerState,
    pub(crate) rule_log: Vec<RuleLogEntry>,
    pub(crate) droptail_by_link: BTreeMap<(EgressIdx, FlowIdx), u64>,
}

impl Simulation {
    pub fn new(
        topo: Topology,
        flow_specs: Vec<FlowSpec>,
        scripted: Vec<ScriptedEvent>,
        params: ControllerParams,
        window_ns: TimeNs,
        duration_ns: TimeNs,
    ) -> Result<Self, BuildError> {
        Self::with_event_bound(
            topo,
            flow_specs,
            scripted,
            params,
            window_ns,
            duration_ns,
            DEFAULT_MAX_PENDING_EVENTS,
        )
    }

    pub fn with_event_bound(
        topo: Topology,
        flow_specs: Vec<FlowSpec>,
        scripted: Vec<ScriptedEvent>,
        params: ControllerParams,
        window_ns: TimeNs,
        duration_ns: TimeNs,
        max_pending_events: usize,
    ) -> Result<Self, BuildError> {
        let report = topo.validate();
        if !report.is_valid() {
            let text = report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(BuildError::InvalidTopology(text));
        }

        let mut flows = Vec::with_capacity(flow_specs.len());
        for spec in flow_specs {
            let src_edge = topo
                .edge_of_host(spec.src_host)
                .ok_or_else(|| PathError::HostNotAttached(topo.node(spec.src_host).name.clone()))?;
            let dst_edge = topo
                .edge_of_host(spec.dst_host)
                .ok_or_else(|| PathError::HostNotAttached(topo.node(spec.dst_host).name.clone()))?;
            let src_uplink = topo
                .egress_toward(spec.src_host, src_edge)
                .expect("edge_of_host implies a link");
            let dst_uplink = topo
                .egress_toward(spec.dst_host, dst_edge)
                .expect("edge_of_host implies a link");
            flows.push(FlowRuntime {
                spec,
                registration: None,
                next_seq: 0,
                src_uplink,
                dst_uplink,
                counters: FlowCounters::default(),
                latency: LatencyStat::default(),
                record: FlowRecord::default(),
                last_delivered_seq: None,
                blackhole_window: None,
            });
        }

        let edge_tables = topo
            .nodes()
            .filter(|(_, n)| n.kind == NodeKind::EdgeSwitch)
            .map(|(i, _)| (i, EdgeTable::default()))
            .collect();

        let metrics = Metrics::new(window_ns, duration_ns, flows.len());
        let mut sim = Simulation {
            egress_state: vec![EgressState::default(); topo.egress_count()],
            topo,
            params,
            duration_ns,
            now: 0,
            events: EventQueue {
                heap: BinaryHeap::new(),
                next_order: 0,
                max_pending: max_pending_events,
            },
            edge_tables,
            flows,
            metrics,
            totals: Totals::default(),
            ctl: ControllerState::new(params.auto_balance),
            rule_log: Vec::new(),
            droptail_by_link: BTreeMap::new(),
        };

        // Scripted events enter the queue before the flow timers so that a
        // registration at t and the first emission at t apply in that order.
        for ev in scripted {
            match ev {
                ScriptedEvent::Register { at, flow, registration } => {
                    sim.events.schedule(at, EventKind::Register { flow, registration })?;
                }
                ScriptedEvent::Migrate { at, flow, new } => {
                    sim.events.schedule(at, EventKind::ScriptedMigrate { flow, new })?;
                }
                ScriptedEvent::AutoBalance { at, on } => {
                    sim.events.schedule(at, EventKind::SetAutoBalance { on })?;
                }
            }
        }
        for idx in 0..sim.flows.len() {
            let spec = &sim.flows[idx].spec;
            if spec.start_ns < spec.stop_ns {
                sim.events
                    .schedule(spec.start_ns, EventKind::FlowTimer { flow: idx })?;
            }
        }
        sim.events.schedule(sim.params.poll_ns, EventKind::StatsPoll)?;
        Ok(sim)
    }

    pub fn now(&self) -> TimeNs {
        self.now
    }

    pub fn duration_ns(&self) -> TimeNs {
        self.duration_ns
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn flows(&self) -> &[FlowRuntime] {
        &self.flows
    }

    pub fn flow_idx(&self, name: &str) -> Option<FlowIdx> {
        self.flows.iter().position(|f| f.spec.name == name)
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn rule_log(&self) -> &[RuleLogEntry] {
        &self.rule_log
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctl
    }

    pub fn edge_table(&self, name: &str) -> Option<&EdgeTable> {
        self.edge_tables.get(&self.topo.node_idx(name)?)
    }

    pub fn egress_states(&self) -> &[EgressState] {
        &self.egress_state
    }

    pub fn droptail_by_link(&self) -> &BTreeMap<(EgressIdx, FlowIdx), u64> {
        &self.droptail_by_link
    }

    /// Packet-conservation snapshot; `in_flight` is counted structurally
    /// from the queues and the pending arrival events, independent of the
    /// running totals.
    pub fn conservation(&self) -> Conservation {
        let queued: u64 = self.egress_state.iter().map(|e| e.fifo.len() as u64).sum();
        Conservation {
            generated: self.totals.generated,
            delivered: self.totals.delivered,
            droptail: self.totals.droptail,
            unmatched: self.totals.unmatched,
            misroute: self.totals.misroute,
            in_flight: queued + self.events.packets_in_flight(),
        }
    }

    /// Processes every event with `time <= t_end` in (time, order) order.
    pub fn run_until(&mut self, t_end: TimeNs) -> Result<(), SimError> {
        while let Some(ev) = self.events.pop_through(t_end) {
            self.now = ev.time;
            self.dispatch(ev.kind)?;
        }
        self.now = t_end.max(self.now);
        Ok(())
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::FlowTimer { flow } => self.emit_packet(flow),
            EventKind::Arrival { node, packet } => self.arrive(node, packet),
            EventKind::DequeueComplete { egress } => self.dequeue_complete(egress),
            EventKind::RuleChange { edge, reason, op } => {
                self.apply_rule_change(edge, reason, op);
                Ok(())
            }
            EventKind::StatsPoll => handle_poll(self),
            EventKind::Register { flow, registration } => self.register_flow(flow, registration),
            EventKind::ScriptedMigrate { flow, new } => scripted_migrate(self, flow, new),
            EventKind::SetAutoBalance { on } => {
                self.ctl.auto_balance = on;
                Ok(())
            }
        }
    }

    pub(crate) fn schedule(&mut self, time: TimeNs, kind: EventKind) -> Result<(), SimError> {
        self.events.schedule(time, kind)
    }

    fn emit_packet(&mut self, flow: FlowIdx) -> Result<(), SimError> {
        let now = self.now;
        let (packet, next_emit, uplink) = {
            let f = &mut self.flows[flow];
            let seq = f.next_seq;
            f.next_seq += 1;
            f.counters.generated += 1;
            let kind = if f.spec.kind.is_probe() {
                PacketKind::ProbeRequest
            } else {
                PacketKind::Data
            };
            let src = host_address(f.spec.src_host);
            let packet = Packet {
                flow,
                kind,
                seq,
                size: f.spec.kind.packet_size(),
                src_field: src,
                original_src: src,
                dst_field: host_address(f.spec.dst_host),
                created_at: now,
            };
            let next = f.spec.kind.emission_at(f.spec.start_ns, f.next_seq);
            let next_emit = (next < f.spec.stop_ns).then_some(next);
            (packet, next_emit, f.src_uplink)
        };
        self.totals.generated += 1;
        if packet.kind == PacketKind::ProbeRequest {
            self.metrics.record_probe_sent(flow, now);
        }
        self.enqueue(packet, uplink)?;
        if let Some(t) = next_emit {
            self.schedule(t, EventKind::FlowTimer { flow })?;
        }
        Ok(())
    }

    fn arrive(&mut self, node: NodeIdx, packet: Packet) -> Result<(), SimError> {
        match self.topo.node(node).kind {
            NodeKind::Host => {
                self.host_arrival(node, packet);
                Ok(())
            }
            NodeKind::CoreSwitch { modulus } => self.core_forward(node, modulus, packet),
            NodeKind::EdgeSwitch => self.edge_process(node, packet),
        }
    }

    /// Core forwarding is a pure function of the address field, the switch
    /// modulus, and the wiring; cores hold no per-flow state.
    pub fn core_egress_for(topo: &Topology, node: NodeIdx, modulus: u64, src_field: [u8; 6]) -> Option<EgressIdx> {
        let port = decode_route_field(src_field).value() % modulus;
        topo.egress_at(node, port)
    }

    fn core_forward(&mut self, node: NodeIdx, modulus: u64, packet: Packet) -> Result<(), SimError> {
        match Self::core_egress_for(&self.topo, node, modulus, packet.src_field) {
            Some(egress) => self.enqueue(packet, egress),
            None => {
                self.drop_packet(&packet, LossCause::Misroute);
                Ok(())
            }
        }
    }

    fn edge_process(&mut self, edge: NodeIdx, mut packet: Packet) -> Result<(), SimError> {
        let now = self.now;
        let dir = packet.kind.dir();
        let decoded = decode_route_field(packet.src_field).value();
        let table = self.edge_tables.get_mut(&edge).expect("edge has a table");

        if let Some(rule) = table.restore.get(&(packet.flow, dir, decoded)) {
            let out = rule.out_egress;
            packet.src_field = rule.original;
            if dir == Dir::Forward {
                self.flows[packet.flow].latency.record(now - packet.created_at);
            }
            return self.enqueue(packet, out);
        }
        if let Some(rule) = table.ingress.get(&(packet.flow, dir)) {
            let out = rule.out_egress;
            if rule.rewrite {
                packet.src_field = encode_route_field(rule.route);
            }
            if dir == Dir::Forward {
                self.flows[packet.flow].record.window_bytes += packet.size as u64;
            }
            return self.enqueue(packet, out);
        }

        table.unmatched += 1;
        self.drop_packet(&packet, LossCause::Unmatched);
        if let Some((from, to, mig)) = self.flows[packet.flow].blackhole_window {
            if now >= from && now < to {
                self.ctl.migrations[mig].dropped_during_window += 1;
            }
        }
        Ok(())
    }

    fn host_arrival(&mut self, host: NodeIdx, packet: Packet) {
        let now = self.now;
        let flow = packet.flow;
        let expected = match packet.kind.dir() {
            Dir::Forward => self.flows[flow].spec.dst_host,
            Dir::Reverse => self.flows[flow].spec.src_host,
        };
        if host != expected {
            self.drop_packet(&packet, LossCause::Misroute);
            return;
        }
        {
            let f = &mut self.flows[flow];
            f.counters.delivered += 1;
            if packet.kind.dir() == Dir::Forward {
                if let Some(prev) = f.last_delivered_seq {
                    if packet.seq <= prev {
                        f.counters.out_of_order += 1;
                    }
                }
                f.last_delivered_seq = Some(packet.seq);
            }
        }
        self.totals.delivered += 1;
        match packet.kind {
            PacketKind::Data => {
                self.flows[flow].counters.delivered_bits += packet.size as u64 * 8;
                self.metrics.record_delivered_data(flow, now, packet.size);
            }
            PacketKind::ProbeRequest => {
                let me = host_address(host);
                let reply = Packet {
                    flow,
                    kind: PacketKind::ProbeReply,
                    seq: packet.seq,
                    size: packet.size,
                    src_field: me,
                    original_src: me,
                    dst_field: packet.original_src,
                    created_at: packet.created_at,
                };
                self.flows[flow].counters.generated += 1;
                self.totals.generated += 1;
                let uplink = self.flows[flow].dst_uplink;
                // Host uplinks are sized for the offered load; a reply that
                // still hits a full queue is accounted like any other drop.
                let _ = self.enqueue(reply, uplink);
            }
            PacketKind::ProbeReply => {
                self.metrics.record_rtt(flow, packet.seq, now);
            }
        }
    }

    fn enqueue(&mut self, packet: Packet, egress: EgressIdx) -> Result<(), SimError> {
        let eg = self.topo.egress(egress);
        let st = &mut self.egress_state[egress];
        if st.fifo.len() >= eg.buffer_pkts as usize {
            st.window_drops += 1;
            st.total_drops += 1;
            *self
                .droptail_by_link
                .entry((egress, packet.flow))
                .or_insert(0) += 1;
            self.drop_packet(&packet, LossCause::DropTail);
            return Ok(());
        }
        let start = self.now.max(st.busy_until);
        let done = start + serialization_ns(packet.size, eg.capacity_bps);
        st.busy_until = done;
        st.fifo.push_back(packet);
        self.schedule(done, EventKind::DequeueComplete { egress })
    }

    fn dequeue_complete(&mut self, egress: EgressIdx) -> Result<(), SimError> {
        let st = &mut self.egress_state[egress];
        let packet = st.fifo.pop_front().expect("dequeue without queued packet");
        st.window_bytes += packet.size as u64;
        st.total_bytes += packet.size as u64;
        let eg = self.topo.egress(egress);
        self.schedule(self.now + eg.delay_ns, EventKind::Arrival { node: eg.to, packet })
    }

    fn drop_packet(&mut self, packet: &Packet, cause: LossCause) {
        let c = &mut self.flows[packet.flow].counters;
        match cause {
            LossCause::DropTail => {
                c.droptail += 1;
                self.totals.droptail += 1;
            }
            LossCause::Unmatched => {
                c.unmatched += 1;
                self.totals.unmatched += 1;
            }
            LossCause::Misroute => {
                c.misroute += 1;
                self.totals.misroute += 1;
            }
            LossCause::ProbeLost => unreachable!("probe losses are derived at export"),
        }
        self.metrics.record_loss(packet.flow, self.now, cause);
    }

    fn register_flow(&mut self, flow: FlowIdx, registration: Registration) -> Result<(), SimError> {
        let fwd = registration.fwd.clone();
        let src_host = self.flows[flow].spec.src_host;
        let dst_host = self.flows[flow].spec.dst_host;

        self.install_direction(flow, Dir::Forward, &fwd, src_host, dst_host, RuleReason::Register);
        if let Some(rev) = &registration.rev {
            self.install_direction(flow, Dir::Reverse, rev, dst_host, src_host, RuleReason::Register);
        }
        self.flows[flow].registration = Some(registration);
        Ok(())
    }

    /// Installs the ingress rule at the direction's source edge and the
    /// restore rule at its destination edge.
    pub(crate) fn install_direction(
        &mut self,
        flow: FlowIdx,
        dir: Dir,
        routed: &RoutedPath,
        from_host: NodeIdx,
        to_host: NodeIdx,
        reason: RuleReason,
    ) {
        let now = self.now;
        let path = &routed.path;
        let ingress_out = if let Some(&(first_core, _)) = path.core_hops.first() {
            self.topo
                .egress_toward(path.src_edge, first_core)
                .expect("registered path was link-checked")
        } else {
            self.topo
                .egress_toward(path.src_edge, to_host)
                .expect("intra-edge path reaches its host")
        };
        let ingress = IngressRule {
            route: routed.route,
            rewrite: !path.core_hops.is_empty(),
            out_port: self.topo.egress(ingress_out).from_port,
            out_egress: ingress_out,
            installed_at: now,
        };
        self.apply_rule_change(
            path.src_edge,
            reason,
            RuleOp::InstallIngress { flow, dir, rule: ingress, commit_path: None },
        );

        let restore_out = self
            .topo
            .egress_toward(path.dst_edge, to_host)
            .expect("registered path reaches its host");
        let restore = RestoreRule {
            original: host_address(from_host),
            out_port: self.topo.egress(restore_out).from_port,
            out_egress: restore_out,
            installed_at: now,
        };
        self.apply_rule_change(
            path.dst_edge,
            reason,
            RuleOp::InstallRestore { flow, dir, route: routed.route.value(), rule: restore },
        );
    }

    pub(crate) fn apply_rule_change(&mut self, edge: NodeIdx, reason: RuleReason, op: RuleOp) {
        let time = self.now;
        let table = self.edge_tables.get_mut(&edge).expect("edge has a table");
        let logged = match op {
            RuleOp::InstallIngress { flow, dir, rule, commit_path } => {
                let route = rule.route.value();
                table.ingress.insert((flow, dir), rule);
                if let Some(routed) = commit_path {
                    if let Some(reg) = self.flows[flow].registration.as_mut() {
                        reg.fwd = routed;
                    }
                }
                Some((RuleOpKind::InstallIngress, flow, route))
            }
            RuleOp::InstallRestore { flow, dir, route, rule } => {
                table.restore.insert((flow, dir, route), rule);
                Some((RuleOpKind::InstallRestore, flow, route))
            }
            RuleOp::RemoveIngress { flow, dir } => table
                .ingress
                .remove(&(flow, dir))
                .map(|r| (RuleOpKind::RemoveIngress, flow, r.route.value())),
            RuleOp::RemoveRestore { flow, dir, route } => table
                .restore
                .remove(&(flow, dir, route))
                .map(|_| (RuleOpKind::RemoveRestore, flow, route)),
        };
        if let Some((op, flow, route)) = logged {
            self.rule_log.push(RuleLogEntry { time, node: edge, op, reason, flow, route });
        }
    }
}
