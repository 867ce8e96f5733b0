// SPDX-License-Identifier: Apache-2.0

//! Measurement over the post-warmup window.

use serde::Serialize;

use super::config::Mode;
use crate::sched::NUM_PRIORITIES;
use crate::switchcore::{Packet, Time, PS_PER_NS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityLatency {
    pub pcp: u8,
    pub packets: u64,
    pub mean_latency_us: Option<f64>,
}

/// Results of one run. Rates and latencies cover packets that arrived in
/// the measurement window; counters cover the whole run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub mode: Mode,
    pub slots: u64,
    pub drain_slots: u64,
    pub offered_gbps: f64,
    pub delivered_gbps: f64,
    pub offered_packets: u64,
    /// Window packets that departed, during the window or the drain.
    pub delivered_packets: u64,
    pub mean_latency_us: Option<f64>,
    pub p50_latency_us: Option<f64>,
    pub p99_latency_us: Option<f64>,
    pub max_latency_us: Option<f64>,
    pub per_priority: Vec<PriorityLatency>,
    pub wasted_grants: u64,
    /// Grants skipped because the fabric link was still busy for the whole slot.
    pub link_busy_grants: u64,
    pub drops: u64,
    /// Largest single VOQ seen at any post-warmup snapshot.
    pub max_voq_bytes: u64,
    pub generated: u64,
    pub emitted: u64,
    pub in_flight: u64,
    pub internal_leaks: u64,
    /// Largest single VOQ at each snapshot, from slot 0.
    #[serde(skip)]
    pub voq_series: Vec<u64>,
}

impl StatsReport {
    /// Every generated packet is emitted, dropped or still queued.
    pub fn conserved(&self) -> bool {
        self.generated == self.emitted + self.drops + self.in_flight
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[Time], p: f64) -> Option<Time> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub(crate) fn ps_to_us(t: f64) -> f64 {
    t / (PS_PER_NS as f64 * 1_000.0)
}

#[derive(Debug, Clone)]
pub(crate) struct Collector {
    window: (Time, Time),
    warmup_slots: u64,
    /// Ingress size of every generated packet, by id.
    sizes: Vec<u32>,
    offered_bytes: u64,
    offered_packets: u64,
    delivered_bytes: u64,
    latencies: Vec<Time>,
    per_pcp: [(u64, u128); NUM_PRIORITIES],
    pub voq_series: Vec<u64>,
}

impl Collector {
    pub fn new(window: (Time, Time), warmup_slots: u64) -> Self {
        Collector {
            window,
            warmup_slots,
            sizes: Vec::new(),
            offered_bytes: 0,
            offered_packets: 0,
            delivered_bytes: 0,
            latencies: Vec::new(),
            per_pcp: [(0, 0); NUM_PRIORITIES],
            voq_series: Vec::new(),
        }
    }

    fn in_window(&self, t: Time) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    pub fn arrival(&mut self, id: u64, size: u32, time: Time) {
        debug_assert_eq!(id as usize, self.sizes.len());
        self.sizes.push(size);
        if self.in_window(time) {
            self.offered_packets += 1;
            self.offered_bytes += u64::from(size);
        }
    }

    pub fn departure(&mut self, p: &Packet) {
        let Some(dep) = p.departure else { return };
        if !self.in_window(p.arrival) {
            return;
        }
        let lat = dep - p.arrival;
        self.latencies.push(lat);
        let slot = &mut self.per_pcp[usize::from(p.pcp & 7)];
        slot.0 += 1;
        slot.1 += u128::from(lat);
        if dep <= self.window.1 {
            self.delivered_bytes += u64::from(self.sizes[p.id as usize]);
        }
    }

    pub fn finish(mut self, mode: Mode, slots: u64, drain_slots: u64, totals: Totals) -> StatsReport {
        self.latencies.sort_unstable();
        let secs_ps = (self.window.1 - self.window.0) as f64;
        let gbps = |bytes: u64| if secs_ps > 0.0 { bytes as f64 * 8_000.0 / secs_ps } else { 0.0 };
        let us = |t: Option<Time>| t.map(|t| ps_to_us(t as f64));
        let n = self.latencies.len();
        let mean = (n > 0).then(|| {
            let sum: u128 = self.latencies.iter().map(|&l| u128::from(l)).sum();
            ps_to_us(sum as f64 / n as f64)
        });
        let warm = self.warmup_slots as usize;
        StatsReport {
            mode,
            slots,
            drain_slots,
            offered_gbps: gbps(self.offered_bytes),
            delivered_gbps: gbps(self.delivered_bytes),
            offered_packets: self.offered_packets,
            delivered_packets: n as u64,
            mean_latency_us: mean,
            p50_latency_us: us(percentile(&self.latencies, 50.0)),
            p99_latency_us: us(percentile(&self.latencies, 99.0)),
            max_latency_us: us(self.latencies.last().copied()),
            per_priority: self
                .per_pcp
                .iter()
                .enumerate()
                .map(|(pcp, &(count, sum))| PriorityLatency {
                    pcp: pcp as u8,
                    packets: count,
                    mean_latency_us: (count > 0).then(|| ps_to_us(sum as f64 / count as f64)),
                })
                .collect(),
            wasted_grants: totals.wasted_grants,
            link_busy_grants: totals.link_busy_grants,
            drops: totals.drops,
            max_voq_bytes: self.voq_series.iter().skip(warm).copied().max().unwrap_or(0),
            generated: self.sizes.len() as u64,
            emitted: totals.emitted,
            in_flight: totals.in_flight,
            internal_leaks: totals.internal_leaks,
            voq_series: self.voq_series,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Totals {
    pub wasted_grants: u64,
    pub link_busy_grants: u64,
    pub drops: u64,
    pub emitted: u64,
    pub in_flight: u64,
    pub internal_leaks: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<Time> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), Some(50));
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&v, 100.0), Some(100));
        assert_eq!(percentile(&v, 0.0), Some(1));
        assert_eq!(percentile(&[7], 99.0), Some(7));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn window_accounting() {
        let mut c = Collector::new((1_000, 2_000), 0);
        let mk = |id, arrival, departure| Packet {
            id,
            bytes: vec![0; 14],
            payload_len: 111,
            arrival,
            ready: arrival,
            departure: Some(departure),
            pcp: 3,
            ingress_port: 0,
            flow: 0,
        };
        c.arrival(0, 125, 500);
        c.arrival(1, 125, 1_500);
        c.arrival(2, 125, 1_600);
        c.departure(&mk(0, 500, 1_200));
        c.departure(&mk(1, 1_500, 1_900));
        c.departure(&mk(2, 1_600, 2_600));
        let r = c.finish(Mode::Hymos, 2, 0, Totals { emitted: 3, ..Totals::default() });
        assert_eq!(r.offered_packets, 2);
        assert_eq!(r.delivered_packets, 2);
        assert!((r.offered_gbps - 2_000.0).abs() < 1e-9, "250 B in 1 ns");
        assert!((r.delivered_gbps - 1_000.0).abs() < 1e-9);
        assert_eq!(r.p50_latency_us, Some(ps_to_us(400.0)));
        assert_eq!(r.per_priority[3].packets, 2);
        assert!(r.conserved());
    }
}
