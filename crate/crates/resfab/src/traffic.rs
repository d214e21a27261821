//! Traffic sources and measurement series.
//!
//! Two generator kinds cover the experiments: constant-bit-rate data flows
//! (fixed packet size, fixed inter-packet gap) and periodic probes whose
//! destination answers immediately so the source can record round-trip
//! times. Measurements accumulate into fixed-width windows for throughput,
//! per-probe RTT samples, and per-cause loss counters.

use std::collections::BTreeMap;

use crate::topology::NodeIdx;
use crate::units::{TimeNs, NS_PER_SEC};

pub type FlowIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowKind {
    /// Constant-bit-rate data source: one packet every `interval_ns`.
    Cbr { interval_ns: f64, size: u32 },
    /// Periodic request/reply probe.
    Probe { period_ns: f64, size: u32 },
}

impl FlowKind {
    /// Interval computed from a packets-per-second rate.
    pub fn cbr_pps(rate_pps: f64, size: u32) -> Self {
        FlowKind::Cbr {
            interval_ns: NS_PER_SEC as f64 / rate_pps,
            size,
        }
    }

    /// Interval computed from an offered bit rate and the packet size.
    pub fn cbr_bps(rate_bps: f64, size: u32) -> Self {
        FlowKind::Cbr {
            interval_ns: size as f64 * 8.0 * NS_PER_SEC as f64 / rate_bps,
            size,
        }
    }

    pub fn interval_ns(&self) -> f64 {
        match *self {
            FlowKind::Cbr { interval_ns, .. } => interval_ns,
            FlowKind::Probe { period_ns, .. } => period_ns,
        }
    }

    /// The `k`-th emission instant for a flow starting at `start_ns`.
    /// Emissions sit on the exact rate grid rather than accumulating a
    /// rounded gap, so the count over any span stays within one packet of
    /// `span * rate`.
    pub fn emission_at(&self, start_ns: TimeNs, k: u64) -> TimeNs {
        start_ns + (k as f64 * self.interval_ns().max(1.0)).round() as TimeNs
    }

    pub fn packet_size(&self) -> u32 {
        match *self {
            FlowKind::Cbr { size, .. } | FlowKind::Probe { size, .. } => size,
        }
    }

    pub fn is_probe(&self) -> bool {
        matches!(self, FlowKind::Probe { .. })
    }

    /// Protocol label for flow records, mirroring the tools the flows model.
    pub fn protocol(&self) -> &'static str {
        match self {
            FlowKind::Cbr { .. } => "udp",
            FlowKind::Probe { .. } => "icmp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub name: String,
    pub kind: FlowKind,
    pub src_host: NodeIdx,
    pub dst_host: NodeIdx,
    pub start_ns: TimeNs,
    pub stop_ns: TimeNs,
}

/// Emission instants of a flow: every grid point strictly before `stop`.
pub fn emission_schedule(spec: &FlowSpec) -> impl Iterator<Item = TimeNs> + '_ {
    (0u64..)
        .map(move |k| spec.kind.emission_at(spec.start_ns, k))
        .take_while(move |&t| t < spec.stop_ns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LossCause {
    DropTail,
    Unmatched,
    Misroute,
    ProbeLost,
}

impl LossCause {
    pub fn as_str(self) -> &'static str {
        match self {
            LossCause::DropTail => "droptail",
            LossCause::Unmatched => "unmatched",
            LossCause::Misroute => "misroute",
            LossCause::ProbeLost => "probe_lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSample {
    pub flow: FlowIdx,
    pub sent_ns: TimeNs,
    pub rtt_ns: TimeNs,
}

/// Run-wide measurement state: throughput windows, RTT samples, losses.
#[derive(Debug, Clone)]
pub struct Metrics {
    window_ns: TimeNs,
    n_windows: usize,
    /// Delivered data bits per window, per flow.
    throughput_bits: Vec<Vec<u64>>,
    rtt: Vec<RttSample>,
    losses: BTreeMap<(u64, FlowIdx, LossCause), u64>,
    /// Probe send log per flow: (send time, answered), indexed by sequence.
    probes: Vec<Vec<(TimeNs, bool)>>,
}

impl Metrics {
    pub fn new(window_ns: TimeNs, duration_ns: TimeNs, n_flows: usize) -> Self {
        let n_windows = (duration_ns.div_ceil(window_ns)).max(1) as usize;
        Metrics {
            window_ns,
            n_windows,
            throughput_bits: vec![vec![0; n_windows]; n_flows],
            rtt: Vec::new(),
            losses: BTreeMap::new(),
            probes: vec![Vec::new(); n_flows],
        }
    }

    pub fn window_ns(&self) -> TimeNs {
        self.window_ns
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    /// Window index for an instant; instants at the very end of the run
    /// fold into the last window.
    fn window_of(&self, t: TimeNs) -> usize {
        ((t / self.window_ns) as usize).min(self.n_windows - 1)
    }

    pub fn record_delivered_data(&mut self, flow: FlowIdx, now: TimeNs, size_bytes: u32) {
        let w = self.window_of(now);
        self.throughput_bits[flow][w] += size_bytes as u64 * 8;
    }

    pub fn record_loss(&mut self, flow: FlowIdx, now: TimeNs, cause: LossCause) {
        let w = self.window_of(now) as u64;
        *self.losses.entry((w, flow, cause)).or_insert(0) += 1;
    }

    pub fn record_probe_sent(&mut self, flow: FlowIdx, now: TimeNs) {
        self.probes[flow].push((now, false));
    }

    pub fn record_rtt(&mut self, flow: FlowIdx, seq: u64, now: TimeNs) {
        if let Some(&mut (sent, ref mut answered)) = self.probes[flow].get_mut(seq as usize) {
            *answered = true;
            self.rtt.push(RttSample {
                flow,
                sent_ns: sent,
                rtt_ns: now - sent,
            });
        }
    }

    pub fn rtt_samples(&self) -> &[RttSample] {
        &self.rtt
    }

    pub fn probe_log(&self, flow: FlowIdx) -> &[(TimeNs, bool)] {
        &self.probes[flow]
    }

    /// Delivered throughput per window for one flow, as (window start, bits/s).
    pub fn window_throughput(&self, flow: FlowIdx) -> Vec<(TimeNs, f64)> {
        let width_s = self.window_ns as f64 / NS_PER_SEC as f64;
        self.throughput_bits[flow]
            .iter()
            .enumerate()
            .map(|(w, &bits)| (w as TimeNs * self.window_ns, bits as f64 / width_s))
            .collect()
    }

    pub fn total_window_bits(&self, flow: FlowIdx) -> u64 {
        self.throughput_bits[flow].iter().sum()
    }

    /// Loss counters including unanswered probes, keyed by
    /// (window, flow, cause). Probes still in flight count as lost.
    pub fn losses_with_probes(&self) -> BTreeMap<(u64, FlowIdx, LossCause), u64> {
        let mut out = self.losses.clone();
        for (flow, log) in self.probes.iter().enumerate() {
            for &(sent, answered) in log {
                if !answered {
                    let w = self.window_of(sent) as u64;
                    *out.entry((w, flow, LossCause::ProbeLost)).or_insert(0) += 1;
                }
            }
        }
        out
    }

    pub fn loss_total(&self, flow: FlowIdx, cause: LossCause) -> u64 {
        self.losses
            .iter()
            .filter(|((_, f, c), _)| *f == flow && *c == cause)
            .map(|(_, &n)| n)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: FlowKind, start: TimeNs, stop: TimeNs) -> FlowSpec {
        FlowSpec {
            name: "f".into(),
            kind,
            src_host: 0,
            dst_host: 1,
            start_ns: start,
            stop_ns: stop,
        }
    }

    #[test]
    fn cbr_gap_from_pps() {
        // 1 / 81274 s = 12.304 us between the first two packets.
        let kind = FlowKind::cbr_pps(81274.0, 1518);
        assert_eq!(kind.emission_at(0, 1) - kind.emission_at(0, 0), 12_304);
        assert!((kind.interval_ns() - 12_304.058).abs() < 0.001);
    }

    #[test]
    fn cbr_gap_from_bps() {
        // 100 Mbit/s at 1518 B is 8234.5 pps, gap 121.44 us exactly.
        assert_eq!(FlowKind::cbr_bps(100e6, 1518).interval_ns(), 121_440.0);
        assert_eq!(FlowKind::cbr_bps(800e6, 1518).interval_ns(), 15_180.0);
    }

    #[test]
    fn one_pps_for_ten_seconds_is_ten_packets() {
        let s = spec(FlowKind::cbr_pps(1.0, 100), 0, 10 * NS_PER_SEC);
        assert_eq!(emission_schedule(&s).count(), 10);
    }

    #[test]
    fn emission_count_matches_rate_window() {
        for (pps, secs) in [(81274.0, 3u64), (8234.5, 7)] {
            let s = spec(FlowKind::cbr_pps(pps, 1518), 0, secs * NS_PER_SEC);
            let n = emission_schedule(&s).count() as f64;
            let expected = (secs as f64 * pps).floor();
            assert!((n - expected).abs() <= 1.0, "{n} vs {expected}");
        }
    }

    #[test]
    fn emission_respects_start_offset() {
        let s = spec(FlowKind::cbr_pps(2.0, 100), NS_PER_SEC, 3 * NS_PER_SEC);
        let times: Vec<TimeNs> = emission_schedule(&s).collect();
        assert_eq!(
            times,
            vec![NS_PER_SEC, NS_PER_SEC + 500_000_000, 2 * NS_PER_SEC, 2 * NS_PER_SEC + 500_000_000]
        );
    }

    #[test]
    fn windows_accumulate_and_sum_exactly() {
        let mut m = Metrics::new(NS_PER_SEC, 3 * NS_PER_SEC, 1);
        m.record_delivered_data(0, 100, 1000);
        m.record_delivered_data(0, NS_PER_SEC + 5, 1000);
        m.record_delivered_data(0, 3 * NS_PER_SEC, 500); // end instant folds into last window
        let tp = m.window_throughput(0);
        assert_eq!(tp.len(), 3);
        assert_eq!(tp[0].1, 8000.0);
        assert_eq!(tp[1].1, 8000.0);
        assert_eq!(tp[2].1, 4000.0);
        assert_eq!(m.total_window_bits(0), 20_000);
    }

    #[test]
    fn unanswered_probes_become_lost_samples() {
        let mut m = Metrics::new(NS_PER_SEC, 3 * NS_PER_SEC, 1);
        m.record_probe_sent(0, 0);
        m.record_probe_sent(0, NS_PER_SEC);
        m.record_rtt(0, 0, 700_000);
        let losses = m.losses_with_probes();
        assert_eq!(losses.get(&(1, 0, LossCause::ProbeLost)), Some(&1));
        assert_eq!(losses.get(&(0, 0, LossCause::ProbeLost)), None);
        assert_eq!(m.rtt_samples().len(), 1);
        assert_eq!(m.rtt_samples()[0].rtt_ns, 700_000);
    }
}
