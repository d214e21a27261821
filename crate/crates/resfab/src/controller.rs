//! Centralized control loop: collect link and flow statistics, classify
//! flows as elephants or mice, find links where the two classes contend,
//! and resolve the contention by migrating elephants onto equal-length
//! paths using edge-only rule changes.
//!
//! The controller runs inside the simulation event loop on the stats-poll
//! timer; it owns no state outside the run.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::dataplane::{
    host_address, EventKind, FlowRuntime, IngressRule, RestoreRule, RoutedPath, RuleOp,
    RuleReason, SimError, Simulation,
};
use crate::topology::{EgressIdx, Path, Topology};
use crate::traffic::FlowIdx;
use crate::units::{TimeNs, NS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowClass {
    #[default]
    Unclassified,
    Elephant,
    Mice,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Unclassified => "unclassified",
            FlowClass::Elephant => "elephant",
            FlowClass::Mice => "mice",
        }
    }
}

/// Classifier view of one flow, updated once per poll.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowRecord {
    pub class: FlowClass,
    pub ewma_bps: f64,
    pub consecutive_over: u32,
    pub consecutive_under: u32,
    /// Bytes matched by the flow's source-edge rule since the last poll.
    pub window_bytes: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ControllerParams {
    pub poll_ns: TimeNs,
    /// Elephant threshold as a fraction of the path's bottleneck capacity.
    pub theta_e: f64,
    /// Mice threshold, same basis.
    pub theta_m: f64,
    /// Consecutive polls over threshold before promotion.
    pub k_polls: u32,
    /// EWMA smoothing factor applied to the newest window rate.
    pub alpha: f64,
    /// Delay from decision to the destination-edge rule install.
    pub t_rule_ns: TimeNs,
    /// How long the old destination restore rule outlives the switch.
    pub t_drain_ns: TimeNs,
    /// Optional gap between removing the old source rule and installing
    /// the new one, emulating non-atomic installs. Zero means atomic.
    pub blackhole_ns: TimeNs,
    pub auto_balance: bool,
    pub max_core_hops: usize,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            poll_ns: NS_PER_SEC,
            theta_e: 0.1,
            theta_m: 0.01,
            k_polls: 3,
            alpha: 0.5,
            t_rule_ns: 500_000,
            t_drain_ns: 10_000_000,
            blackhole_ns: 0,
            auto_balance: false,
            max_core_hops: crate::topology::DEFAULT_MAX_CORE_HOPS,
        }
    }
}

/// One directed link's counters over the last poll window.
#[derive(Debug, Clone, Copy)]
pub struct LinkWindowStats {
    pub egress: EgressIdx,
    pub bytes: u64,
    pub drops: u64,
    /// Queue depth at the poll instant.
    pub occupancy: usize,
    /// Delivered bits over capacity for the window, clamped to 1.
    pub utilization: f64,
}

/// A congested link carrying both elephants and mice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub egress: EgressIdx,
    pub elephants: Vec<FlowIdx>,
    pub mice: Vec<FlowIdx>,
}

/// Everything the controller observed and decided at one poll.
#[derive(Debug, Clone)]
pub struct PollRecord {
    pub time: TimeNs,
    pub classes: Vec<FlowClass>,
    pub conflicts: Vec<Conflict>,
    pub stats: Vec<LinkWindowStats>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationAction {
    pub flow: FlowIdx,
    pub old: RoutedPath,
    pub new: RoutedPath,
    pub decided_at: TimeNs,
    pub dest_rule_at: TimeNs,
    pub src_rule_at: TimeNs,
    pub drain_until: TimeNs,
}

/// Exported migration log row.
#[derive(Debug, Clone)]
pub struct MigrationRecord {
    pub decided_at: TimeNs,
    pub flow: FlowIdx,
    pub old_route: u64,
    pub new_route: u64,
    pub old_path: String,
    pub new_path: String,
    pub dropped_during_window: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MigrationError {
    #[error("route id does not match the target path")]
    RouteMismatch,
    #[error("migration target equals the current path")]
    SamePath,
    #[error("flow is not registered")]
    NotRegistered,
    #[error("rule installs must order destination, then source, then drain")]
    InvalidSchedule,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug)]
pub struct ControllerState {
    pub auto_balance: bool,
    pub polls: Vec<PollRecord>,
    pub last_stats: Vec<LinkWindowStats>,
    pub migrations: Vec<MigrationRecord>,
}

impl ControllerState {
    pub fn new(auto_balance: bool) -> Self {
        ControllerState {
            auto_balance,
            polls: Vec::new(),
            last_stats: Vec::new(),
            migrations: Vec::new(),
        }
    }
}

/// Per-poll classification step. Promotion to elephant needs `k` straight
/// polls over the threshold; an elephant only demotes after `k` straight
/// polls under half of it.
pub fn classify_flow(
    record: &mut FlowRecord,
    sent_any: bool,
    min_path_capacity: u64,
    p: &ControllerParams,
) -> FlowClass {
    let cap = min_path_capacity as f64;
    if record.ewma_bps >= p.theta_e * cap {
        record.consecutive_over += 1;
    } else {
        record.consecutive_over = 0;
    }
    let base = |record: &FlowRecord| {
        if record.ewma_bps <= p.theta_m * cap && sent_any {
            FlowClass::Mice
        } else {
            FlowClass::Unclassified
        }
    };
    match record.class {
        FlowClass::Elephant => {
            if record.ewma_bps < p.theta_e / 2.0 * cap {
                record.consecutive_under += 1;
            } else {
                record.consecutive_under = 0;
            }
            if record.consecutive_under >= p.k_polls {
                record.consecutive_under = 0;
                record.class = base(record);
            }
        }
        _ => {
            if record.consecutive_over >= p.k_polls {
                record.class = FlowClass::Elephant;
                record.consecutive_under = 0;
            } else {
                record.class = base(record);
            }
        }
    }
    record.class
}

fn flow_egress_set(flow: &FlowRuntime, topo: &Topology) -> Option<BTreeSet<EgressIdx>> {
    let reg = flow.registration.as_ref()?;
    let mut set: BTreeSet<EgressIdx> = topo.path_egresses(&reg.fwd.path).ok()?.into_iter().collect();
    if let Some(rev) = &reg.rev {
        set.extend(topo.path_egresses(&rev.path).ok()?);
    }
    Some(set)
}

fn is_core_core(topo: &Topology, egress: EgressIdx) -> bool {
    let eg = topo.egress(egress);
    topo.node(eg.from).is_core() && topo.node(eg.to).is_core()
}

/// Links where at least one elephant and one mice flow contend, in
/// deterministic link order. A link only counts while it is actually
/// congested (window drops or a deep queue), so a shaped flow passing
/// through an empty downstream queue does not register.
pub fn detect_conflicts(
    flows: &[FlowRuntime],
    topo: &Topology,
    stats: &[LinkWindowStats],
) -> Vec<Conflict> {
    let sets: Vec<Option<BTreeSet<EgressIdx>>> =
        flows.iter().map(|f| flow_egress_set(f, topo)).collect();
    let mut out = Vec::new();
    for st in stats {
        let buffer = topo.egress(st.egress).buffer_pkts as usize;
        let congested = st.drops > 0 || st.occupancy > buffer / 2;
        if !congested {
            continue;
        }
        let on_link = |class: FlowClass| -> Vec<FlowIdx> {
            flows
                .iter()
                .enumerate()
                .filter(|(i, f)| {
                    f.record.class == class
                        && sets[*i].as_ref().is_some_and(|s| s.contains(&st.egress))
                })
                .map(|(i, _)| i)
                .collect()
        };
        let elephants = on_link(FlowClass::Elephant);
        if elephants.is_empty() {
            continue;
        }
        let mice = on_link(FlowClass::Mice);
        if mice.is_empty() {
            continue;
        }
        out.push(Conflict { egress: st.egress, elephants, mice });
    }
    out
}

pub fn plan_migration(
    flow: FlowIdx,
    old: RoutedPath,
    new: RoutedPath,
    decided_at: TimeNs,
    p: &ControllerParams,
) -> MigrationAction {
    let dest_rule_at = decided_at + p.t_rule_ns;
    let src_rule_at = decided_at + 2 * p.t_rule_ns;
    MigrationAction {
        flow,
        old,
        new,
        decided_at,
        dest_rule_at,
        src_rule_at,
        drain_until: src_rule_at + p.t_drain_ns,
    }
}

/// For every conflicted elephant, picks the equal-length candidate path
/// that carries no mice over its core links and has the lowest maximum
/// link utilization; candidate order breaks ties toward the smaller
/// modulus sequence. Mice flows are never migrated.
pub fn decide_migrations(
    conflicts: &[Conflict],
    flows: &[FlowRuntime],
    stats: &[LinkWindowStats],
    topo: &Topology,
    now: TimeNs,
    p: &ControllerParams,
) -> Vec<MigrationAction> {
    let mut util = vec![0.0f64; topo.egress_count()];
    for st in stats {
        util[st.egress] = st.utilization;
    }
    let mut mice_core: BTreeSet<EgressIdx> = BTreeSet::new();
    for f in flows {
        if f.record.class == FlowClass::Mice {
            if let Some(set) = flow_egress_set(f, topo) {
                mice_core.extend(set.into_iter().filter(|&e| is_core_core(topo, e)));
            }
        }
    }

    let mut planned: BTreeSet<FlowIdx> = BTreeSet::new();
    let mut actions = Vec::new();
    for conflict in conflicts {
        for &fi in &conflict.elephants {
            if !planned.insert(fi) {
                continue;
            }
            let Some(reg) = flows[fi].registration.as_ref() else {
                continue;
            };
            let current = &reg.fwd;
            let candidates = topo.enumerate_equal_length_paths(
                current.path.src_edge,
                current.path.dst_edge,
                &current.path,
                p.max_core_hops,
            );
            let mut best: Option<(f64, Path)> = None;
            for cand in candidates {
                let Ok(egresses) = topo.path_egresses(&cand) else {
                    continue;
                };
                if egresses
                    .iter()
                    .any(|e| is_core_core(topo, *e) && mice_core.contains(e))
                {
                    continue;
                }
                let max_util = egresses
                    .iter()
                    .map(|&e| util[e])
                    .fold(0.0f64, f64::max);
                // Strict comparison keeps the first (lexicographically
                // smallest) candidate among equals.
                if best.as_ref().map(|(b, _)| max_util < *b).unwrap_or(true) {
                    best = Some((max_util, cand));
                }
            }
            if let Some((_, path)) = best {
                let Ok(route) = topo.route_id_for_path(&path) else {
                    continue;
                };
                actions.push(plan_migration(
                    fi,
                    current.clone(),
                    RoutedPath { path, route },
                    now,
                    p,
                ));
            }
        }
    }
    actions
}

/// Schedules the make-before-break rule sequence for one migration:
/// restore rule for the new route at the destination edge, then the
/// source-edge rewrite flip, then removal of the old restore after the
/// drain window. Core switches are never touched.
pub fn execute_migration(sim: &mut Simulation, action: MigrationAction) -> Result<(), MigrationError> {
    let recomputed = sim
        .topo
        .route_id_for_path(&action.new.path)
        .map_err(|_| MigrationError::RouteMismatch)?;
    if recomputed != action.new.route {
        return Err(MigrationError::RouteMismatch);
    }
    if action.new.path == action.old.path {
        return Err(MigrationError::SamePath);
    }
    if !(action.dest_rule_at <= action.src_rule_at && action.src_rule_at < action.drain_until) {
        return Err(MigrationError::InvalidSchedule);
    }
    let flow = action.flow;
    if sim.flows[flow].registration.is_none() {
        return Err(MigrationError::NotRegistered);
    }
    let src_host = sim.flows[flow].spec.src_host;
    let dst_host = sim.flows[flow].spec.dst_host;
    let src_edge = action.new.path.src_edge;
    let dst_edge = action.new.path.dst_edge;

    let mig_idx = sim.ctl.migrations.len();
    sim.ctl.migrations.push(MigrationRecord {
        decided_at: action.decided_at,
        flow,
        old_route: action.old.route.value(),
        new_route: action.new.route.value(),
        old_path: sim.topo.format_path(&action.old.path),
        new_path: sim.topo.format_path(&action.new.path),
        dropped_during_window: 0,
    });

    let restore_out = sim
        .topo
        .egress_toward(dst_edge, dst_host)
        .expect("migration target reaches its host");
    let restore_port = sim.topo.egress(restore_out).from_port;
    sim.schedule(
        action.dest_rule_at,
        EventKind::RuleChange {
            edge: dst_edge,
            reason: RuleReason::Migrate,
            op: RuleOp::InstallRestore {
                flow,
                dir: crate::dataplane::Dir::Forward,
                route: action.new.route.value(),
                rule: RestoreRule {
                    original: host_address(src_host),
                    out_port: restore_port,
                    out_egress: restore_out,
                    installed_at: action.dest_rule_at,
                },
            },
        },
    )?;

    let ingress_out = if let Some(&(first_core, _)) = action.new.path.core_hops.first() {
        sim.topo
            .egress_toward(src_edge, first_core)
            .expect("migration target was link-checked")
    } else {
        sim.topo
            .egress_toward(src_edge, dst_host)
            .expect("intra-edge target reaches its host")
    };
    let make_ingress = |installed_at: TimeNs, topo: &Topology| IngressRule {
        route: action.new.route,
        rewrite: !action.new.path.core_hops.is_empty(),
        out_port: topo.egress(ingress_out).from_port,
        out_egress: ingress_out,
        installed_at,
    };
    let blackhole = sim.params.blackhole_ns;
    if blackhole == 0 {
        let rule = make_ingress(action.src_rule_at, &sim.topo);
        sim.schedule(
            action.src_rule_at,
            EventKind::RuleChange {
                edge: src_edge,
                reason: RuleReason::Migrate,
                op: RuleOp::InstallIngress {
                    flow,
                    dir: crate::dataplane::Dir::Forward,
                    rule,
                    commit_path: Some(action.new.clone()),
                },
            },
        )?;
    } else {
        sim.schedule(
            action.src_rule_at,
            EventKind::RuleChange {
                edge: src_edge,
                reason: RuleReason::Migrate,
                op: RuleOp::RemoveIngress { flow, dir: crate::dataplane::Dir::Forward },
            },
        )?;
        let rule = make_ingress(action.src_rule_at + blackhole, &sim.topo);
        sim.schedule(
            action.src_rule_at + blackhole,
            EventKind::RuleChange {
                edge: src_edge,
                reason: RuleReason::Migrate,
                op: RuleOp::InstallIngress {
                    flow,
                    dir: crate::dataplane::Dir::Forward,
                    rule,
                    commit_path: Some(action.new.clone()),
                },
            },
        )?;
        sim.flows[flow].blackhole_window =
            Some((action.src_rule_at, action.src_rule_at + blackhole, mig_idx));
    }

    // When old and new routes happen to share a value, the fresh restore
    // rule replaced the old one in place and must not be drained away.
    if action.old.route != action.new.route {
        sim.schedule(
            action.drain_until,
            EventKind::RuleChange {
                edge: dst_edge,
                reason: RuleReason::DrainExpire,
                op: RuleOp::RemoveRestore {
                    flow,
                    dir: crate::dataplane::Dir::Forward,
                    route: action.old.route.value(),
                },
            },
        )?;
    }
    Ok(())
}

/// Handles a scripted migration event. A target equal to the current path
/// is rejected as a no-op; an unregistered flow is skipped.
pub(crate) fn scripted_migrate(
    sim: &mut Simulation,
    flow: FlowIdx,
    new: RoutedPath,
) -> Result<(), SimError> {
    let Some(reg) = sim.flows[flow].registration.clone() else {
        return Ok(());
    };
    let action = plan_migration(flow, reg.fwd, new, sim.now(), &sim.params);
    match execute_migration(sim, action) {
        Ok(()) | Err(MigrationError::SamePath) | Err(MigrationError::NotRegistered) => Ok(()),
        Err(MigrationError::Sim(e)) => Err(e),
        Err(MigrationError::RouteMismatch) | Err(MigrationError::InvalidSchedule) => {
            Err(SimError::RouteMismatch)
        }
    }
}

/// The stats-poll event: snapshot link windows, update flow rates and
/// classes, record conflicts, and (in auto mode) trigger migrations.
pub(crate) fn handle_poll(sim: &mut Simulation) -> Result<(), SimError> {
    let now = sim.now();
    let poll_s = sim.params.poll_ns as f64 / NS_PER_SEC as f64;

    let mut stats = Vec::with_capacity(sim.egress_state.len());
    for egress in 0..sim.egress_state.len() {
        let capacity = sim.topo.egress(egress).capacity_bps;
        let st = &mut sim.egress_state[egress];
        let utilization =
            ((st.window_bytes * 8) as f64 / (capacity as f64 * poll_s)).min(1.0);
        stats.push(LinkWindowStats {
            egress,
            bytes: st.window_bytes,
            drops: st.window_drops,
            occupancy: st.occupancy(),
            utilization,
        });
        st.window_bytes = 0;
        st.window_drops = 0;
    }

    let mut classes = Vec::with_capacity(sim.flows.len());
    for idx in 0..sim.flows.len() {
        let min_cap = sim.flows[idx]
            .registration
            .as_ref()
            .and_then(|r| sim.topo.min_path_capacity(&r.fwd.path).ok());
        let params = sim.params;
        let f = &mut sim.flows[idx];
        let window_rate_bps = f.record.window_bytes as f64 * 8.0 / poll_s;
        f.record.window_bytes = 0;
        f.record.ewma_bps =
            params.alpha * window_rate_bps + (1.0 - params.alpha) * f.record.ewma_bps;
        let sent_any = f.next_seq > 0;
        let class = match min_cap {
            Some(cap) => classify_flow(&mut f.record, sent_any, cap, &params),
            None => f.record.class,
        };
        classes.push(class);
    }

    let conflicts = detect_conflicts(&sim.flows, &sim.topo, &stats);
    let actions = if sim.ctl.auto_balance {
        decide_migrations(&conflicts, &sim.flows, &stats, &sim.topo, now, &sim.params)
    } else {
        Vec::new()
    };
    sim.ctl.polls.push(PollRecord {
        time: now,
        classes,
        conflicts,
        stats: stats.clone(),
    });
    sim.ctl.last_stats = stats;

    for action in actions {
        match execute_migration(sim, action) {
            Ok(()) | Err(MigrationError::SamePath) | Err(MigrationError::NotRegistered) => {}
            Err(MigrationError::Sim(e)) => return Err(e),
            Err(MigrationError::RouteMismatch) | Err(MigrationError::InvalidSchedule) => {
                return Err(SimError::RouteMismatch)
            }
        }
    }
    sim.schedule(now + sim.params.poll_ns, EventKind::StatsPoll)
}
