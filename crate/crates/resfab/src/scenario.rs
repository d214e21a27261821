//! Scenario files, experiment driving, and CSV export.
//!
//! Scenarios are line-oriented plain text: one declaration per line with
//! `key=value` pairs, which keeps golden outputs diff-friendly. A scenario
//! carries the topology, controller parameters, flow specs, scheduled
//! events (registration, timed migrations, auto-balance toggles), a
//! duration, and a seed. Running one produces four CSV files whose bytes
//! depend only on the scenario text and seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use thiserror::Error;

use crate::controller::ControllerParams;
use crate::dataplane::{Registration, RoutedPath, ScriptedEvent, SimError, Simulation};
use crate::topology::{Topology, Violation};
use crate::traffic::{FlowKind, FlowSpec};
use crate::units::{
    format_f64_fixed, format_ns_as_secs, format_u64_fixed, secs_to_ns, TimeNs, NS_PER_SEC,
};

pub const DEFAULT_PROBE_SIZE: u32 = 98;

#[derive(Debug, Clone, PartialEq)]
pub struct CoreDecl {
    pub name: String,
    pub modulus: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDecl {
    pub a: String,
    pub a_port: u64,
    pub b: String,
    pub b_port: u64,
    pub capacity_bps: u64,
    pub delay_s: f64,
    pub buffer_pkts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateDecl {
    Pps(f64),
    Bps(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowDeclKind {
    Cbr { rate: RateDecl, size: u32 },
    Probe { period_s: f64, size: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDecl {
    pub name: String,
    pub kind: FlowDeclKind,
    pub src: String,
    pub dst: String,
    pub start_s: f64,
    pub stop_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventDecl {
    Register { flow: String, cores: Vec<String>, at_s: f64 },
    Migrate { flow: String, cores: Vec<String>, at_s: f64 },
    AutoBalance { at_s: f64, on: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cores: Vec<CoreDecl>,
    pub edges: Vec<String>,
    pub hosts: Vec<String>,
    pub links: Vec<LinkDecl>,
    pub controller: ControllerSettings,
    pub window_s: f64,
    pub flows: Vec<FlowDecl>,
    pub events: Vec<EventDecl>,
    pub duration_s: f64,
    pub seed: u64,
}

/// Controller knobs in scenario units (seconds and fractions).
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub poll_s: f64,
    pub theta_e: f64,
    pub theta_m: f64,
    pub k: u32,
    pub alpha: f64,
    pub t_rule_s: f64,
    pub t_drain_s: f64,
    pub blackhole_s: f64,
    pub auto_balance: bool,
    pub max_hops: usize,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings {
            poll_s: 1.0,
            theta_e: 0.1,
            theta_m: 0.01,
            k: 3,
            alpha: 0.5,
            t_rule_s: 0.0005,
            t_drain_s: 0.01,
            blackhole_s: 0.0,
            auto_balance: false,
            max_hops: crate::topology::DEFAULT_MAX_CORE_HOPS,
        }
    }
}

impl ControllerSettings {
    pub fn to_params(&self) -> ControllerParams {
        ControllerParams {
            poll_ns: secs_to_ns(self.poll_s),
            theta_e: self.theta_e,
            theta_m: self.theta_m,
            k_polls: self.k,
            alpha: self.alpha,
            t_rule_ns: secs_to_ns(self.t_rule_s),
            t_drain_ns: secs_to_ns(self.t_drain_s),
            blackhole_ns: secs_to_ns(self.blackhole_s),
            auto_balance: self.auto_balance,
            max_core_hops: self.max_hops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl ScenarioError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ScenarioError { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        ScenarioError { line: None, message: message.into() }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario invalid:\n{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ScenarioError>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Build(#[from] crate::dataplane::BuildError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_kv(token: &str) -> Option<(&str, &str)> {
    token.split_once('=')
}

fn name_ok(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

struct LineCtx {
    line: usize,
}

impl LineCtx {
    fn num<T: std::str::FromStr>(&self, value: &str, what: &str) -> Result<T, ScenarioError> {
        value
            .parse::<T>()
            .map_err(|_| ScenarioError::at(self.line, format!("invalid {what} `{value}`")))
    }
}

/// Parses and validates a scenario, collecting every error it can find
/// with its line number.
pub fn parse_scenario(text: &str) -> Result<Scenario, Vec<ScenarioError>> {
    let mut errors: Vec<ScenarioError> = Vec::new();
    let mut cores: Vec<(CoreDecl, usize)> = Vec::new();
    let mut edges: Vec<(String, usize)> = Vec::new();
    let mut hosts: Vec<(String, usize)> = Vec::new();
    let mut links: Vec<(LinkDecl, usize)> = Vec::new();
    let mut controller: Option<(ControllerSettings, usize)> = None;
    let mut window_s: Option<f64> = None;
    let mut flows: Vec<(FlowDecl, usize)> = Vec::new();
    let mut events: Vec<(EventDecl, usize)> = Vec::new();
    let mut duration_s: Option<(f64, usize)> = None;
    let mut seed: Option<u64> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let ctx = LineCtx { line: line_no };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let mut err = |msg: String| errors.push(ScenarioError::at(line_no, msg));
        match tokens[0] {
            "core" => {
                if tokens.len() != 3 {
                    err("expected `core <name> modulus=<int>`".into());
                    continue;
                }
                let name = tokens[1].to_string();
                if !name_ok(&name) {
                    err(format!("invalid node name `{name}`"));
                    continue;
                }
                match parse_kv(tokens[2]) {
                    Some(("modulus", v)) => match ctx.num::<u64>(v, "modulus") {
                        Ok(modulus) => cores.push((CoreDecl { name, modulus }, line_no)),
                        Err(e) => errors.push(e),
                    },
                    _ => err("expected `modulus=<int>`".into()),
                }
            }
            "edge" | "host" => {
                if tokens.len() != 2 || !name_ok(tokens[1]) {
                    err(format!("expected `{} <name>`", tokens[0]));
                    continue;
                }
                if tokens[0] == "edge" {
                    edges.push((tokens[1].to_string(), line_no));
                } else {
                    hosts.push((tokens[1].to_string(), line_no));
                }
            }
            "link" => {
                match parse_link(&tokens, &ctx) {
                    Ok(decl) => links.push((decl, line_no)),
                    Err(e) => errors.push(e),
                }
            }
            "controller" => {
                if controller.is_some() {
                    err("duplicate controller line".into());
                    continue;
                }
                match parse_controller(&tokens[1..], &ctx) {
                    Ok(c) => controller = Some((c, line_no)),
                    Err(e) => errors.push(e),
                }
            }
            "metrics" => {
                if tokens.len() != 2 {
                    err("expected `metrics window=<seconds>`".into());
                    continue;
                }
                match parse_kv(tokens[1]) {
                    Some(("window", v)) => match ctx.num::<f64>(v, "window") {
                        Ok(w) if w > 0.0 => window_s = Some(w),
                        Ok(_) => err("metrics window must be positive".into()),
                        Err(e) => errors.push(e),
                    },
                    _ => err("expected `window=<seconds>`".into()),
                }
            }
            "flow" => match parse_flow(&tokens, &ctx) {
                Ok(decl) => flows.push((decl, line_no)),
                Err(e) => errors.push(e),
            },
            "event" => match parse_event(&tokens, &ctx) {
                Ok(decl) => events.push((decl, line_no)),
                Err(e) => errors.push(e),
            },
            "duration" => {
                if tokens.len() != 2 {
                    err("expected `duration <seconds>`".into());
                    continue;
                }
                match ctx.num::<f64>(tokens[1], "duration") {
                    Ok(d) => duration_s = Some((d, line_no)),
                    Err(e) => errors.push(e),
                }
            }
            "seed" => {
                if tokens.len() != 2 {
                    err("expected `seed <int>`".into());
                    continue;
                }
                match ctx.num::<u64>(tokens[1], "seed") {
                    Ok(s) => seed = Some(s),
                    Err(e) => errors.push(e),
                }
            }
            other => err(format!("unknown declaration `{other}`")),
        }
    }

    if cores.is_empty() && edges.is_empty() && hosts.is_empty() && links.is_empty() {
        errors.push(ScenarioError::general("no topology"));
    }
    let duration = match duration_s {
        Some((d, line)) if d <= 0.0 => {
            errors.push(ScenarioError::at(line, "duration must be positive"));
            d
        }
        Some((d, _)) => d,
        None => {
            errors.push(ScenarioError::general("missing `duration` declaration"));
            0.0
        }
    };

    let scenario = Scenario {
        cores: cores.iter().map(|(c, _)| c.clone()).collect(),
        edges: edges.iter().map(|(e, _)| e.clone()).collect(),
        hosts: hosts.iter().map(|(h, _)| h.clone()).collect(),
        links: links.iter().map(|(l, _)| l.clone()).collect(),
        controller: controller.clone().map(|(c, _)| c).unwrap_or_default(),
        window_s: window_s.unwrap_or(1.0),
        flows: flows.iter().map(|(f, _)| f.clone()).collect(),
        events: events.iter().map(|(e, _)| e.clone()).collect(),
        duration_s: duration,
        seed: seed.unwrap_or(0),
    };

    validate(&scenario, &cores, &links, &flows, &events, &mut errors);

    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(errors)
    }
}

fn parse_link(tokens: &[&str], ctx: &LineCtx) -> Result<LinkDecl, ScenarioError> {
    if tokens.len() != 6 {
        return Err(ScenarioError::at(
            ctx.line,
            "expected `link <a>:<port> <b>:<port> capacity=<bits/s> delay=<s> buffer=<pkts>`",
        ));
    }
    let endpoint = |tok: &str| -> Result<(String, u64), ScenarioError> {
        let (node, port) = tok
            .split_once(':')
            .ok_or_else(|| ScenarioError::at(ctx.line, format!("expected `<node>:<port>`, got `{tok}`")))?;
        if !name_ok(node) {
            return Err(ScenarioError::at(ctx.line, format!("invalid node name `{node}`")));
        }
        Ok((node.to_string(), ctx.num::<u64>(port, "port")?))
    };
    let (a, a_port) = endpoint(tokens[1])?;
    let (b, b_port) = endpoint(tokens[2])?;
    let mut capacity: Option<f64> = None;
    let mut delay: Option<f64> = None;
    let mut buffer: Option<u32> = None;
    for tok in &tokens[3..] {
        match parse_kv(tok) {
            Some(("capacity", v)) => capacity = Some(ctx.num::<f64>(v, "capacity")?),
            Some(("delay", v)) => delay = Some(ctx.num::<f64>(v, "delay")?),
            Some(("buffer", v)) => buffer = Some(ctx.num::<u32>(v, "buffer")?),
            _ => return Err(ScenarioError::at(ctx.line, format!("unknown link field `{tok}`"))),
        }
    }
    let capacity = capacity.ok_or_else(|| ScenarioError::at(ctx.line, "link needs capacity="))?;
    let delay = delay.ok_or_else(|| ScenarioError::at(ctx.line, "link needs delay="))?;
    let buffer = buffer.ok_or_else(|| ScenarioError::at(ctx.line, "link needs buffer="))?;
    if capacity <= 0.0 {
        return Err(ScenarioError::at(ctx.line, "capacity must be positive"));
    }
    if delay < 0.0 {
        return Err(ScenarioError::at(ctx.line, "delay must not be negative"));
    }
    if buffer == 0 {
        return Err(ScenarioError::at(ctx.line, "buffer must hold at least one packet"));
    }
    Ok(LinkDecl {
        a,
        a_port,
        b,
        b_port,
        capacity_bps: capacity.round() as u64,
        delay_s: delay,
        buffer_pkts: buffer,
    })
}

fn parse_controller(tokens: &[&str], ctx: &LineCtx) -> Result<ControllerSettings, ScenarioError> {
    let mut c = ControllerSettings::default();
    for tok in tokens {
        let Some((key, v)) = parse_kv(tok) else {
            return Err(ScenarioError::at(ctx.line, format!("expected key=value, got `{tok}`")));
        };
        match key {
            "poll" => c.poll_s = ctx.num(v, "poll")?,
            "theta_e" => c.theta_e = ctx.num(v, "theta_e")?,
            "theta_m" => c.theta_m = ctx.num(v, "theta_m")?,
            "k" => c.k = ctx.num(v, "k")?,
            "alpha" => c.alpha = ctx.num(v, "alpha")?,
            "t_rule" => c.t_rule_s = ctx.num(v, "t_rule")?,
            "t_drain" => c.t_drain_s = ctx.num(v, "t_drain")?,
            "blackhole" => c.blackhole_s = ctx.num(v, "blackhole")?,
            "max_hops" => c.max_hops = ctx.num(v, "max_hops")?,
            "auto_balance" => {
                c.auto_balance = match v {
                    "on" => true,
                    "off" => false,
                    _ => return Err(ScenarioError::at(ctx.line, "auto_balance must be on or off")),
                }
            }
            _ => return Err(ScenarioError::at(ctx.line, format!("unknown controller field `{key}`"))),
        }
    }
    if c.poll_s <= 0.0 {
        return Err(ScenarioError::at(ctx.line, "poll must be positive"));
    }
    Ok(c)
}

fn parse_flow(tokens: &[&str], ctx: &LineCtx) -> Result<FlowDecl, ScenarioError> {
    if tokens.len() < 3 {
        return Err(ScenarioError::at(ctx.line, "expected `flow <id> cbr|probe ...`"));
    }
    let name = tokens[1].to_string();
    if !name_ok(&name) {
        return Err(ScenarioError::at(ctx.line, format!("invalid flow id `{name}`")));
    }
    let mut src = None;
    let mut dst = None;
    let mut start = 0.0f64;
    let mut stop = None;
    let mut size = None;
    let mut rate_pps = None;
    let mut rate_bps = None;
    let mut period = None;
    for tok in &tokens[3..] {
        let Some((key, v)) = parse_kv(tok) else {
            return Err(ScenarioError::at(ctx.line, format!("expected key=value, got `{tok}`")));
        };
        match key {
            "src" => src = Some(v.to_string()),
            "dst" => dst = Some(v.to_string()),
            "start" => start = ctx.num(v, "start")?,
            "stop" => stop = Some(ctx.num::<f64>(v, "stop")?),
            "size" => size = Some(ctx.num::<u32>(v, "size")?),
            "rate_pps" => rate_pps = Some(ctx.num::<f64>(v, "rate_pps")?),
            "rate_bps" => rate_bps = Some(ctx.num::<f64>(v, "rate_bps")?),
            "period" => period = Some(ctx.num::<f64>(v, "period")?),
            _ => return Err(ScenarioError::at(ctx.line, format!("unknown flow field `{key}`"))),
        }
    }
    let src = src.ok_or_else(|| ScenarioError::at(ctx.line, "flow needs src="))?;
    let dst = dst.ok_or_else(|| ScenarioError::at(ctx.line, "flow needs dst="))?;
    let stop = stop.ok_or_else(|| ScenarioError::at(ctx.line, "flow needs stop="))?;
    let kind = match tokens[2] {
        "cbr" => {
            let size = size.ok_or_else(|| ScenarioError::at(ctx.line, "cbr flow needs size="))?;
            let rate = match (rate_pps, rate_bps) {
                (Some(pps), None) => RateDecl::Pps(pps),
                (None, Some(bps)) => RateDecl::Bps(bps),
                _ => {
                    return Err(ScenarioError::at(
                        ctx.line,
                        "cbr flow needs exactly one of rate_pps= or rate_bps=",
                    ))
                }
            };
            let positive = match &rate {
                RateDecl::Pps(v) | RateDecl::Bps(v) => *v > 0.0,
            };
            if !positive {
                return Err(ScenarioError::at(ctx.line, "rate must be positive"));
            }
            if let RateDecl::Pps(pps) = rate {
                if pps > NS_PER_SEC as f64 {
                    return Err(ScenarioError::at(ctx.line, "rate exceeds one packet per nanosecond"));
                }
            }
            FlowDeclKind::Cbr { rate, size }
        }
        "probe" => {
            let period_s =
                period.ok_or_else(|| ScenarioError::at(ctx.line, "probe flow needs period="))?;
            if period_s <= 0.0 {
                return Err(ScenarioError::at(ctx.line, "period must be positive"));
            }
            FlowDeclKind::Probe { period_s, size: size.unwrap_or(DEFAULT_PROBE_SIZE) }
        }
        other => return Err(ScenarioError::at(ctx.line, format!("unknown flow kind `{other}`"))),
    };
    if let FlowDeclKind::Cbr { size: 0, .. } | FlowDeclKind::Probe { size: 0, .. } = kind {
        return Err(ScenarioError::at(ctx.line, "packet size must be positive"));
    }
    if start >= stop {
        return Err(ScenarioError::at(ctx.line, "flow start must be before stop"));
    }
    if start < 0.0 {
        return Err(ScenarioError::at(ctx.line, "flow start must not be negative"));
    }
    Ok(FlowDecl { name, kind, src, dst, start_s: start, stop_s: stop })
}

fn parse_event(tokens: &[&str], ctx: &LineCtx) -> Result<EventDecl, ScenarioError> {
    if tokens.len() < 2 {
        return Err(ScenarioError::at(ctx.line, "expected `event register|migrate|auto_balance ...`"));
    }
    let mut flow = None;
    let mut at = None;
    let mut cores: Option<Vec<String>> = None;
    let mut value = None;
    for tok in &tokens[2..] {
        let Some((key, v)) = parse_kv(tok) else {
            return Err(ScenarioError::at(ctx.line, format!("expected key=value, got `{tok}`")));
        };
        match key {
            "flow" => flow = Some(v.to_string()),
            "at" => at = Some(ctx.num::<f64>(v, "at")?),
            "path" => {
                let list: Vec<String> = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| s.to_string()).collect()
                };
                cores = Some(list);
            }
            "value" => value = Some(v.to_string()),
            _ => return Err(ScenarioError::at(ctx.line, format!("unknown event field `{key}`"))),
        }
    }
    match tokens[1] {
        "register" => {
            let flow = flow.ok_or_else(|| ScenarioError::at(ctx.line, "register needs flow="))?;
            let cores = cores.ok_or_else(|| ScenarioError::at(ctx.line, "register needs path="))?;
            Ok(EventDecl::Register { flow, cores, at_s: at.unwrap_or(0.0) })
        }
        "migrate" => {
            let flow = flow.ok_or_else(|| ScenarioError::at(ctx.line, "migrate needs flow="))?;
            let cores = cores.ok_or_else(|| ScenarioError::at(ctx.line, "migrate needs path="))?;
            let at = at.ok_or_else(|| ScenarioError::at(ctx.line, "migrate needs at="))?;
            Ok(EventDecl::Migrate { flow, cores, at_s: at })
        }
        "auto_balance" => {
            let at = at.ok_or_else(|| ScenarioError::at(ctx.line, "auto_balance needs at="))?;
            let on = match value.as_deref() {
                Some("on") => true,
                Some("off") => false,
                _ => return Err(ScenarioError::at(ctx.line, "auto_balance needs value=on|off")),
            };
            Ok(EventDecl::AutoBalance { at_s: at, on })
        }
        other => Err(ScenarioError::at(ctx.line, format!("unknown event kind `{other}`"))),
    }
}

/// Builds the topology from declarations, attributing construction errors
/// and validation violations back to source lines.
fn build_topology(
    cores: &[(CoreDecl, usize)],
    edges: &[(String, usize)],
    hosts: &[(String, usize)],
    links: &[(LinkDecl, usize)],
    errors: &mut Vec<ScenarioError>,
) -> Topology {
    let mut topo = Topology::new();
    for (c, line) in cores {
        if let Err(e) = topo.add_core_switch(&c.name, c.modulus) {
            errors.push(ScenarioError::at(*line, e.to_string()));
        }
    }
    for (e, line) in edges {
        if let Err(err) = topo.add_edge_switch(e) {
            errors.push(ScenarioError::at(*line, err.to_string()));
        }
    }
    for (h, line) in hosts {
        if let Err(err) = topo.add_host(h) {
            errors.push(ScenarioError::at(*line, err.to_string()));
        }
    }
    for (l, line) in links {
        if let Err(err) = topo.add_link(
            &l.a,
            l.a_port,
            &l.b,
            l.b_port,
            l.capacity_bps,
            secs_to_ns(l.delay_s),
            l.buffer_pkts,
        ) {
            errors.push(ScenarioError::at(*line, err.to_string()));
        }
    }
    for v in topo.validate().violations {
        let line = match &v {
            Violation::InvalidModulus { node, .. } => cores
                .iter()
                .find(|(c, _)| &c.name == node)
                .map(|(_, l)| *l),
            Violation::ModuliShareFactor { b, .. } => cores
                .iter()
                .find(|(c, _)| &c.name == b)
                .map(|(_, l)| *l),
            Violation::PortExceedsModulus { node, port, .. } => links
                .iter()
                .find(|(l, _)| {
                    (&l.a == node && l.a_port == *port) || (&l.b == node && l.b_port == *port)
                })
                .map(|(_, l)| *l),
        };
        match line {
            Some(l) => errors.push(ScenarioError::at(l, v.to_string())),
            None => errors.push(ScenarioError::general(v.to_string())),
        }
    }
    topo
}

fn validate(
    scenario: &Scenario,
    cores: &[(CoreDecl, usize)],
    links: &[(LinkDecl, usize)],
    flows: &[(FlowDecl, usize)],
    events: &[(EventDecl, usize)],
    errors: &mut Vec<ScenarioError>,
) {
    let edge_decls: Vec<(String, usize)> =
        scenario.edges.iter().map(|e| (e.clone(), 0)).collect();
    let host_decls: Vec<(String, usize)> =
        scenario.hosts.iter().map(|h| (h.clone(), 0)).collect();
    let topo = build_topology(cores, &edge_decls, &host_decls, links, errors);
    if !errors.is_empty() {
        return;
    }

    let mut flow_names: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, line) in flows {
        if flow_names.insert(f.name.as_str(), *line).is_some() {
            errors.push(ScenarioError::at(*line, format!("duplicate flow id `{}`", f.name)));
        }
        for host in [&f.src, &f.dst] {
            match topo.node_idx(host) {
                None => errors.push(ScenarioError::at(*line, format!("unknown host `{host}`"))),
                Some(idx) if topo.node(idx).kind != crate::topology::NodeKind::Host => {
                    errors.push(ScenarioError::at(*line, format!("`{host}` is not a host")))
                }
                Some(idx) => {
                    if topo.edge_of_host(idx).is_none() {
                        errors.push(ScenarioError::at(
                            *line,
                            format!("host `{host}` is not attached to an edge switch"),
                        ));
                    }
                }
            }
        }
    }
    if !errors.is_empty() {
        return;
    }

    let mut registered_at: BTreeMap<&str, f64> = BTreeMap::new();
    for (ev, line) in events {
        let (flow_name, cores_list, at) = match ev {
            EventDecl::Register { flow, cores, at_s } => (flow, cores, *at_s),
            EventDecl::Migrate { flow, cores, at_s } => (flow, cores, *at_s),
            EventDecl::AutoBalance { .. } => continue,
        };
        let Some(decl) = flows.iter().map(|(f, _)| f).find(|f| &f.name == flow_name) else {
            errors.push(ScenarioError::at(*line, format!("unknown flow `{flow_name}`")));
            continue;
        };
        let mut core_idx = Vec::with_capacity(cores_list.len());
        let mut bad = false;
        for c in cores_list {
            match topo.node_idx(c) {
                Some(i) => core_idx.push(i),
                None => {
                    errors.push(ScenarioError::at(*line, format!("unknown core `{c}`")));
                    bad = true;
                }
            }
        }
        if bad {
            continue;
        }
        let src = topo.node_idx(&decl.src).unwrap();
        let dst = topo.node_idx(&decl.dst).unwrap();
        match topo.make_path(src, &core_idx, dst) {
            Ok(path) => {
                if let Err(e) = topo.route_id_for_path(&path) {
                    errors.push(ScenarioError::at(*line, e.to_string()));
                } else if matches!(decl.kind, FlowDeclKind::Probe { .. }) {
                    // Probe replies need the reverse direction too.
                    if let Err(e) = topo.reverse_path(&path) {
                        errors.push(ScenarioError::at(*line, format!("reply path: {e}")));
                    }
                }
            }
            Err(e) => errors.push(ScenarioError::at(*line, e.to_string())),
        }
        match ev {
            EventDecl::Register { flow, at_s, .. } => {
                if registered_at.insert(flow.as_str(), *at_s).is_some() {
                    errors.push(ScenarioError::at(*line, format!("flow `{flow}` registered twice")));
                }
            }
            EventDecl::Migrate { flow, .. } => match registered_at.get(flow.as_str()) {
                Some(reg_at) if *reg_at <= at => {}
                _ => errors.push(ScenarioError::at(
                    *line,
                    format!("flow `{flow}` is migrated before it is registered"),
                )),
            },
            EventDecl::AutoBalance { .. } => {}
        }
    }
}

/// Canonical text form; `parse_scenario` of the result yields an equal
/// scenario.
pub fn scenario_to_text(s: &Scenario) -> String {
    let mut out = String::new();
    for c in &s.cores {
        out.push_str(&format!("core {} modulus={}\n", c.name, c.modulus));
    }
    for e in &s.edges {
        out.push_str(&format!("edge {e}\n"));
    }
    for h in &s.hosts {
        out.push_str(&format!("host {h}\n"));
    }
    for l in &s.links {
        out.push_str(&format!(
            "link {}:{} {}:{} capacity={} delay={} buffer={}\n",
            l.a, l.a_port, l.b, l.b_port, l.capacity_bps, l.delay_s, l.buffer_pkts
        ));
    }
    let c = &s.controller;
    out.push_str(&format!(
        "controller poll={} theta_e={} theta_m={} k={} alpha={} t_rule={} t_drain={} blackhole={} auto_balance={} max_hops={}\n",
        c.poll_s,
        c.theta_e,
        c.theta_m,
        c.k,
        c.alpha,
        c.t_rule_s,
        c.t_drain_s,
        c.blackhole_s,
        if c.auto_balance { "on" } else { "off" },
        c.max_hops,
    ));
    out.push_str(&format!("metrics window={}\n", s.window_s));
    for f in &s.flows {
        match &f.kind {
            FlowDeclKind::Cbr { rate, size } => {
                let rate_part = match rate {
                    RateDecl::Pps(v) => format!("rate_pps={v}"),
                    RateDecl::Bps(v) => format!("rate_bps={v}"),
                };
                out.push_str(&format!(
                    "flow {} cbr src={} dst={} {} size={} start={} stop={}\n",
                    f.name, f.src, f.dst, rate_part, size, f.start_s, f.stop_s
                ));
            }
            FlowDeclKind::Probe { period_s, size } => {
                out.push_str(&format!(
                    "flow {} probe src={} dst={} period={} size={} start={} stop={}\n",
                    f.name, f.src, f.dst, period_s, size, f.start_s, f.stop_s
                ));
            }
        }
    }
    for ev in &s.events {
        match ev {
            EventDecl::Register { flow, cores, at_s } => {
                out.push_str(&format!(
                    "event register flow={flow} path={} at={at_s}\n",
                    cores.join(",")
                ));
            }
            EventDecl::Migrate { flow, cores, at_s } => {
                out.push_str(&format!(
                    "event migrate flow={flow} at={at_s} path={}\n",
                    cores.join(",")
                ));
            }
            EventDecl::AutoBalance { at_s, on } => {
                out.push_str(&format!(
                    "event auto_balance at={at_s} value={}\n",
                    if *on { "on" } else { "off" }
                ));
            }
        }
    }
    out.push_str(&format!("duration {}\n", s.duration_s));
    out.push_str(&format!("seed {}\n", s.seed));
    out
}

/// Instantiates the simulation for a validated scenario.
pub fn build_simulation(s: &Scenario) -> Result<Simulation, RunError> {
    let mut errors = Vec::new();
    let core_decls: Vec<(CoreDecl, usize)> = s.cores.iter().map(|c| (c.clone(), 0)).collect();
    let edge_decls: Vec<(String, usize)> = s.edges.iter().map(|e| (e.clone(), 0)).collect();
    let host_decls: Vec<(String, usize)> = s.hosts.iter().map(|h| (h.clone(), 0)).collect();
    let link_decls: Vec<(LinkDecl, usize)> = s.links.iter().map(|l| (l.clone(), 0)).collect();
    let topo = build_topology(&core_decls, &edge_decls, &host_decls, &link_decls, &mut errors);
    if !errors.is_empty() {
        return Err(RunError::Invalid(errors));
    }

    let mut specs = Vec::with_capacity(s.flows.len());
    for f in &s.flows {
        let kind = match &f.kind {
            FlowDeclKind::Cbr { rate, size } => match rate {
                RateDecl::Pps(pps) => FlowKind::cbr_pps(*pps, *size),
                RateDecl::Bps(bps) => FlowKind::cbr_bps(*bps, *size),
            },
            FlowDeclKind::Probe { period_s, size } => FlowKind::Probe {
                period_ns: period_s * NS_PER_SEC as f64,
                size: *size,
            },
        };
        specs.push(FlowSpec {
            name: f.name.clone(),
            kind,
            src_host: topo.node_idx(&f.src).expect("validated host"),
            dst_host: topo.node_idx(&f.dst).expect("validated host"),
            start_ns: secs_to_ns(f.start_s),
            stop_ns: secs_to_ns(f.stop_s),
        });
    }

    let flow_idx = |name: &str| specs.iter().position(|sp| sp.name == name).expect("validated flow");
    let resolve = |flow: usize, cores: &[String]| -> RoutedPath {
        let core_idx: Vec<_> = cores
            .iter()
            .map(|c| topo.node_idx(c).expect("validated core"))
            .collect();
        let path = topo
            .make_path(specs[flow].src_host, &core_idx, specs[flow].dst_host)
            .expect("validated path");
        let route = topo.route_id_for_path(&path).expect("validated route");
        RoutedPath { path, route }
    };

    let mut scripted = Vec::with_capacity(s.events.len());
    for ev in &s.events {
        match ev {
            EventDecl::Register { flow, cores, at_s } => {
                let fi = flow_idx(flow);
                let fwd = resolve(fi, cores);
                let rev = specs[fi].kind.is_probe().then(|| {
                    let path = topo.reverse_path(&fwd.path).expect("validated reply path");
                    let route = topo.route_id_for_path(&path).expect("validated reply route");
                    RoutedPath { path, route }
                });
                scripted.push(ScriptedEvent::Register {
                    at: secs_to_ns(*at_s),
                    flow: fi,
                    registration: Registration { fwd, rev },
                });
            }
            EventDecl::Migrate { flow, cores, at_s } => {
                let fi = flow_idx(flow);
                scripted.push(ScriptedEvent::Migrate {
                    at: secs_to_ns(*at_s),
                    flow: fi,
                    new: resolve(fi, cores),
                });
            }
            EventDecl::AutoBalance { at_s, on } => {
                scripted.push(ScriptedEvent::AutoBalance { at: secs_to_ns(*at_s), on: *on });
            }
        }
    }

    let sim = Simulation::new(
        topo,
        specs,
        scripted,
        s.controller.to_params(),
        secs_to_ns(s.window_s),
        secs_to_ns(s.duration_s),
    )?;
    Ok(sim)
}

/// Output bundle of one experiment run.
pub struct RunOutput {
    pub sim: Simulation,
    pub files: Vec<PathBuf>,
}

/// Runs the scenario to its duration and writes `throughput.csv`,
/// `rtt.csv`, `loss.csv`, and `migrations.csv` into `out_dir`.
pub fn run_experiment(s: &Scenario, out_dir: &FsPath) -> Result<RunOutput, RunError> {
    let mut sim = build_simulation(s)?;
    sim.run_until(secs_to_ns(s.duration_s))?;
    let files = export_csvs(&sim, out_dir)?;
    Ok(RunOutput { sim, files })
}

pub fn export_csvs(sim: &Simulation, out_dir: &FsPath) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(out_dir)?;
    Ok(vec![
        write_file(out_dir, "throughput.csv", throughput_csv(sim))?,
        write_file(out_dir, "rtt.csv", rtt_csv(sim))?,
        write_file(out_dir, "loss.csv", loss_csv(sim))?,
        write_file(out_dir, "migrations.csv", migrations_csv(sim))?,
    ])
}

fn write_file(dir: &FsPath, name: &str, content: String) -> Result<PathBuf, RunError> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(content.as_bytes())?;
    Ok(path)
}

fn throughput_csv(sim: &Simulation) -> String {
    let mut out = String::from("window_start_s,flow,bits_per_s\n");
    let data_flows: Vec<usize> = sim
        .flows()
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.spec.kind.is_probe())
        .map(|(i, _)| i)
        .collect();
    for w in 0..sim.metrics().n_windows() {
        for &fi in &data_flows {
            let (start, bps) = sim.metrics().window_throughput(fi)[w];
            out.push_str(&format!(
                "{},{},{}\n",
                format_ns_as_secs(start),
                sim.flows()[fi].spec.name,
                format_f64_fixed(bps)
            ));
        }
    }
    out
}

fn rtt_csv(sim: &Simulation) -> String {
    let mut out = String::from("send_time_s,flow,rtt_s\n");
    let mut samples = sim.metrics().rtt_samples().to_vec();
    samples.sort_by_key(|s| (s.sent_ns, s.flow));
    for s in samples {
        out.push_str(&format!(
            "{},{},{}\n",
            format_ns_as_secs(s.sent_ns),
            sim.flows()[s.flow].spec.name,
            format_ns_as_secs(s.rtt_ns)
        ));
    }
    out
}

fn loss_csv(sim: &Simulation) -> String {
    let mut out = String::from("interval_start_s,flow,cause,count\n");
    let window_ns = sim.metrics().window_ns();
    let mut rows: Vec<(TimeNs, &str, &'static str, u64)> = sim
        .metrics()
        .losses_with_probes()
        .into_iter()
        .map(|((w, flow, cause), count)| {
            (
                w * window_ns,
                sim.flows()[flow].spec.name.as_str(),
                cause.as_str(),
                count,
            )
        })
        .collect();
    rows.sort();
    for (start, flow, cause, count) in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_ns_as_secs(start),
            flow,
            cause,
            format_u64_fixed(count)
        ));
    }
    out
}

fn migrations_csv(sim: &Simulation) -> String {
    let mut out =
        String::from("decided_s,flow,old_route,new_route,old_path,new_path,dropped_during_window\n");
    for m in &sim.controller().migrations {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_ns_as_secs(m.decided_at),
            sim.flows()[m.flow].spec.name,
            format_u64_fixed(m.old_route),
            format_u64_fixed(m.new_route),
            m.old_path,
            m.new_path,
            format_u64_fixed(m.dropped_during_window)
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    FigBMigration,
    FigCdIsolation,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fig_b_migration" => Some(Builtin::FigBMigration),
            "fig_cd_isolation" => Some(Builtin::FigCdIsolation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::FigBMigration => "fig_b_migration",
            Builtin::FigCdIsolation => "fig_cd_isolation",
        }
    }
}

fn fig_topology_text() -> &'static str {
    "core S11 modulus=11\n\
     core S13 modulus=13\n\
     core S17 modulus=17\n\
     core S19 modulus=19\n\
     edge E1\n\
     edge E2\n\
     host VMS1\n\
     host VMS2\n\
     host VMD1\n\
     host VMD2\n\
     link VMS1:0 E1:0 capacity=10e9 delay=50e-6 buffer=1000\n\
     link VMS2:0 E1:1 capacity=10e9 delay=50e-6 buffer=1000\n\
     link E1:2 S11:0 capacity=10e9 delay=50e-6 buffer=1000\n\
     link S11:1 S19:1 capacity=930e6 delay=50e-6 buffer=1000\n\
     link S11:2 S13:1 capacity=930e6 delay=50e-6 buffer=1000\n\
     link S19:0 S17:0 capacity=930e6 delay=50e-6 buffer=1000\n\
     link S13:0 S17:1 capacity=930e6 delay=50e-6 buffer=1000\n\
     link S17:14 E2:2 capacity=10e9 delay=50e-6 buffer=1000\n\
     link E2:0 VMD1:0 capacity=10e9 delay=50e-6 buffer=1000\n\
     link E2:1 VMD2:0 capacity=10e9 delay=50e-6 buffer=1000\n"
}

/// Text of a built-in scenario. `rate_mbps` applies to the data flow of
/// `fig_b_migration` (default 100); `blackhole_ms` switches the source
/// rule flip from atomic to remove-then-install with that gap.
pub fn builtin_scenario_text(
    builtin: Builtin,
    rate_mbps: Option<f64>,
    blackhole_ms: Option<f64>,
) -> String {
    let blackhole_s = blackhole_ms.unwrap_or(0.0) / 1e3;
    let controller = format!(
        "controller poll=1 theta_e=0.1 theta_m=0.01 k=3 alpha=0.5 t_rule=0.0005 t_drain=0.01 blackhole={blackhole_s} auto_balance=off\n"
    );
    match builtin {
        Builtin::FigBMigration => {
            let rate_bps = rate_mbps.unwrap_or(100.0) * 1e6;
            format!(
                "# Constant-rate flow over the four-core fabric; its route moves\n\
                 # from S11->S19->S17 to S11->S13->S17 at t=50s.\n\
                 {topo}{controller}\
                 flow f1 cbr src=VMS1 dst=VMD2 rate_bps={rate_bps} size=1518 start=0 stop=60\n\
                 event register flow=f1 path=S11,S19,S17\n\
                 event migrate flow=f1 at=50 path=S11,S13,S17\n\
                 duration 60\n\
                 seed 1\n",
                topo = fig_topology_text(),
            )
        }
        Builtin::FigCdIsolation => format!(
            "# A saturating data flow and a one-per-second probe share the\n\
             # S11->S19->S17 path; the data flow moves to S11->S13->S17 at t=30s.\n\
             {topo}{controller}\
             flow f1 cbr src=VMS1 dst=VMD2 rate_pps=81274 size=1518 start=0 stop=60\n\
             flow f2 probe src=VMS2 dst=VMD1 period=1 size=98 start=0 stop=60\n\
             event register flow=f1 path=S11,S19,S17\n\
             event register flow=f2 path=S11,S19,S17\n\
             event migrate flow=f1 at=30 path=S11,S13,S17\n\
             duration 60\n\
             seed 1\n",
            topo = fig_topology_text(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_fig_cd_parses() {
        let s = parse_scenario(&builtin_scenario_text(Builtin::FigCdIsolation, None, None)).unwrap();
        assert_eq!(s.flows.len(), 2);
        assert_eq!(s.duration_s, 60.0);
        let migrate = s
            .events
            .iter()
            .find_map(|e| match e {
                EventDecl::Migrate { flow, at_s, cores } => Some((flow.clone(), *at_s, cores.clone())),
                _ => None,
            })
            .unwrap();
        assert_eq!(migrate, ("f1".to_string(), 30.0, vec!["S11".into(), "S13".into(), "S17".into()]));
    }

    #[test]
    fn empty_file_reports_no_topology() {
        let errs = parse_scenario("").unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("no topology")));
    }

    #[test]
    fn port_at_or_above_modulus_is_rejected_with_line() {
        let text = "core S11 modulus=11\n\
                    edge E1\n\
                    link S11:13 E1:0 capacity=1e9 delay=0 buffer=10\n\
                    duration 1\n";
        let errs = parse_scenario(text).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, Some(3));
        assert!(errs[0].message.contains("port 13"));
    }

    #[test]
    fn unknown_references_are_rejected() {
        let text = "core S11 modulus=11\n\
                    edge E1\n\
                    host A\n\
                    link A:0 E1:0 capacity=1e9 delay=0 buffer=10\n\
                    link E1:1 S11:0 capacity=1e9 delay=0 buffer=10\n\
                    link E1:2 NOPE:0 capacity=1e9 delay=0 buffer=10\n\
                    flow f1 cbr src=A dst=GHOST rate_pps=1 size=100 start=0 stop=1\n\
                    event migrate flow=f2 at=1 path=S11\n\
                    duration 1\n";
        let errs = parse_scenario(text).unwrap_err();
        assert!(errs.iter().any(|e| e.line == Some(6) && e.message.contains("NOPE")));
        // Later validation stages only run once the topology is sound.
        assert_eq!(errs.len(), 1);
    }

    #[test]
    fn migrate_before_register_is_rejected() {
        let text = format!(
            "{}flow f1 cbr src=VMS1 dst=VMD2 rate_bps=1e6 size=1518 start=0 stop=2\n\
             event register flow=f1 path=S11,S19,S17 at=1\n\
             event migrate flow=f1 at=0.5 path=S11,S13,S17\n\
             duration 2\n",
            fig_topology_text()
        );
        let errs = parse_scenario(&text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("before it is registered")));
    }

    #[test]
    fn unlinked_migration_path_is_rejected() {
        let text = format!(
            "{}flow f1 cbr src=VMS1 dst=VMD2 rate_bps=1e6 size=1518 start=0 stop=2\n\
             event register flow=f1 path=S11,S17\n\
             duration 2\n",
            fig_topology_text()
        );
        let errs = parse_scenario(&text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("no link between S11 and S17")));
    }

    #[test]
    fn round_trip_is_structurally_identical() {
        for builtin in [Builtin::FigBMigration, Builtin::FigCdIsolation] {
            for rate in [None, Some(400.0)] {
                let text = builtin_scenario_text(builtin, rate, Some(1.0));
                let parsed = parse_scenario(&text).unwrap();
                let reparsed = parse_scenario(&scenario_to_text(&parsed)).unwrap();
                assert_eq!(parsed, reparsed);
            }
        }
    }

    #[test]
    fn zero_flow_scenario_writes_headers_only() {
        let text = "core S11 modulus=11\n\
                    edge E1\n\
                    host A\n\
                    link A:0 E1:0 capacity=1e9 delay=0 buffer=10\n\
                    link E1:1 S11:0 capacity=1e9 delay=0 buffer=10\n\
                    duration 2\n";
        let s = parse_scenario(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&s, dir.path()).unwrap();
        assert_eq!(out.sim.totals().generated, 0);
        let throughput = fs::read_to_string(dir.path().join("throughput.csv")).unwrap();
        assert_eq!(throughput, "window_start_s,flow,bits_per_s\n");
        let rtt = fs::read_to_string(dir.path().join("rtt.csv")).unwrap();
        assert_eq!(rtt, "send_time_s,flow,rtt_s\n");
        let loss = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(loss, "interval_start_s,flow,cause,count\n");
        let migrations = fs::read_to_string(dir.path().join("migrations.csv")).unwrap();
        assert_eq!(
            migrations,
            "decided_s,flow,old_route,new_route,old_path,new_path,dropped_during_window\n"
        );
    }

    #[test]
    fn small_run_repeats_byte_identically() {
        let text = format!(
            "{}flow f1 cbr src=VMS1 dst=VMD2 rate_bps=50e6 size=1518 start=0 stop=3\n\
             flow f2 probe src=VMS2 dst=VMD1 period=1 size=98 start=0 stop=3\n\
             event register flow=f1 path=S11,S19,S17\n\
             event register flow=f2 path=S11,S19,S17\n\
             event migrate flow=f1 at=2 path=S11,S13,S17\n\
             duration 3\n\
             seed 7\n",
            fig_topology_text()
        );
        let s = parse_scenario(&text).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_experiment(&s, d1.path()).unwrap();
        run_experiment(&s, d2.path()).unwrap();
        for name in ["throughput.csv", "rtt.csv", "loss.csv", "migrations.csv"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn csv_values_use_nine_fraction_digits() {
        let text = format!(
            "{}flow f1 cbr src=VMS1 dst=VMD2 rate_bps=10e6 size=1000 start=0 stop=1\n\
             event register flow=f1 path=S11,S19,S17\n\
             duration 1\n",
            fig_topology_text()
        );
        let s = parse_scenario(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&s, dir.path()).unwrap();
        assert!(out.sim.conservation().balanced());
        // Window sums account for every delivered bit exactly.
        assert_eq!(
            out.sim.metrics().total_window_bits(0),
            out.sim.flows()[0].counters.delivered_bits
        );
        let throughput = fs::read_to_string(dir.path().join("throughput.csv")).unwrap();
        let mut lines = throughput.lines();
        assert_eq!(lines.next(), Some("window_start_s,flow,bits_per_s"));
        let row = lines.next().unwrap();
        // 1250 packets of 1000 B in the only window, minus the few still in
        // flight at the cut: value stays a whole number of packet bits.
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "0.000000000");
        assert_eq!(fields[1], "f1");
        let bps: f64 = fields[2].parse().unwrap();
        assert!((bps - 10e6).abs() / 10e6 < 0.01, "throughput off: {bps}");
        assert!(fields[2].ends_with(".000000000"));
    }
}
