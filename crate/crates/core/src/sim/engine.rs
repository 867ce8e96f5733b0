// SPDX-License-Identifier: Apache-2.0

//! The slotted simulation loop.
//!
//! Slot `s` covers `[sT, (s+1)T)` and runs four phases in order:
//!
//! 1. fabric transfers for the grants computed from the snapshot of slot
//!    `s - depth`;
//! 2. arrivals of the slot, ordered by (time, port), through card ingress;
//! 3. the end-of-slot demand snapshot, which is scheduled immediately;
//! 4. egress drain up to `(s+1)T`.
//!
//! Fabric links stay occupied across slot boundaries: a transfer starts no
//! earlier than the end of the previous one on either card's link.

use std::collections::VecDeque;

use thiserror::Error;

use super::config::{ConfigError, Experiment, Mode};
use super::stats::{Collector, StatsReport, Totals};
use super::traffic::TrafficGen;
use crate::p4ir::{BuildError, Executable};
use crate::sched::{
    enumerate_matchings, schedule, snapshot_demand, DemandMatrixSet, Grant, GrantSet, MatchingSet, PriorityOrder,
    SchedError,
};
use crate::switchcore::{
    fabric_transfer, pair_mut, CardConfig, LineCardState, Packet, PcieError, PcieLink, PortNumbering, Time, Transfer,
    PS_PER_NS,
};
use crate::xlate::{translate, TranslateError, TranslateOptions, MAX_GLOBAL_PORT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Pcie(#[from] PcieError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

/// What happened in one slot.
#[derive(Debug, Clone)]
pub struct SlotTrace {
    pub slot: u64,
    /// The snapshot and grants executed in this slot, if any.
    pub applied: Option<(DemandMatrixSet, GrantSet)>,
    pub transfers: Vec<(Grant, Transfer)>,
    pub arrivals: usize,
    /// Snapshot taken at the end of this slot (absent for a single card).
    pub snapshot: Option<DemandMatrixSet>,
    pub departed: Vec<Packet>,
}

pub struct Simulation {
    mode: Mode,
    slot_ps: Time,
    depth: u64,
    duration: u64,
    drain_cap: u64,
    bounds: (u32, u32),
    cards: Vec<LineCardState>,
    /// (card, local index) by global port.
    locate: Vec<Option<(usize, u16)>>,
    traffic: TrafficGen,
    ms: Option<MatchingSet>,
    order: PriorityOrder,
    /// Per-direction fabric rate of each card's link, in bytes per ns.
    link_rate: Vec<f64>,
    free_out: Vec<Time>,
    free_in: Vec<Time>,
    pending: VecDeque<(DemandMatrixSet, GrantSet)>,
    link_busy_grants: u64,
    slot: u64,
    next_id: u64,
    stats: Collector,
}

impl Simulation {
    pub fn new(exp: &Experiment) -> Result<Simulation, SimError> {
        let cfg = &exp.cfg;
        exp.check()?;
        let traffic = TrafficGen::new(exp)?;
        let card_cfg = |numbering| CardConfig {
            processing: cfg.processing_ns * PS_PER_NS,
            voq_cap_bytes: cfg.voq_cap_bytes,
            internal_ethertype: cfg.internal_ethertype,
            numbering,
        };
        let topo = &exp.topology;
        let mut locate = vec![None; usize::from(MAX_GLOBAL_PORT) + 1];
        let cards: Vec<LineCardState> = match cfg.mode {
            Mode::Hymos => {
                let opts = TranslateOptions { internal_ethertype: cfg.internal_ethertype };
                let result = translate(&exp.program, topo, &exp.entries, opts)?;
                let n = result.cards.len();
                (0..n)
                    .map(|c| {
                        let exec = Executable::new(&result.cards[c].program, &result.card_entries(c, &exp.entries))?;
                        let ports: Vec<(u16, f64)> =
                            topo.cards[c].ports.iter().map(|p| (p.global_id, p.rate_gbps)).collect();
                        for (l, p) in ports.iter().enumerate() {
                            locate[usize::from(p.0)] = Some((c, l as u16));
                        }
                        Ok(LineCardState::new(c, n, exec, &ports, card_cfg(PortNumbering::Local)))
                    })
                    .collect::<Result<_, SimError>>()?
            }
            Mode::Baseline => {
                let exec = Executable::new(&exp.program, &exp.entries)?;
                let mut ports: Vec<(u16, f64)> =
                    topo.cards.iter().flat_map(|c| c.ports.iter().map(|p| (p.global_id, p.rate_gbps))).collect();
                ports.sort_by_key(|p| p.0);
                for (l, p) in ports.iter().enumerate() {
                    locate[usize::from(p.0)] = Some((0, l as u16));
                }
                vec![LineCardState::new(0, 1, exec, &ports, card_cfg(PortNumbering::Global))]
            }
        };
        let n = cards.len();
        let link_rate = match cfg.mode {
            Mode::Hymos => topo
                .cards
                .iter()
                .map(|c| Ok(PcieLink::try_from(c.link)?.per_direction(cfg.link_model)))
                .collect::<Result<Vec<f64>, PcieError>>()?,
            Mode::Baseline => vec![0.0],
        };
        let ms = if n > 1 { Some(enumerate_matchings(n)?) } else { None };
        let slot_ps = cfg.slot_ns * PS_PER_NS;
        let warmup = cfg.warmup();
        Ok(Simulation {
            mode: cfg.mode,
            slot_ps,
            depth: cfg.pipeline_depth,
            duration: cfg.duration_slots,
            drain_cap: cfg.drain_cap_slots.unwrap_or(cfg.duration_slots.max(10_000)),
            bounds: cfg.size_bounds,
            cards,
            locate,
            traffic,
            ms,
            order: cfg.priority_order.order(),
            link_rate,
            free_out: vec![0; n],
            free_in: vec![0; n],
            pending: VecDeque::new(),
            link_busy_grants: 0,
            slot: 0,
            next_id: 0,
            stats: Collector::new((warmup * slot_ps, cfg.duration_slots * slot_ps), warmup),
        })
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn cards(&self) -> &[LineCardState] {
        &self.cards
    }

    pub fn in_flight(&self) -> u64 {
        self.cards.iter().map(|c| c.in_flight()).sum()
    }

    /// Byte budget of a grant from card i to card j: one slot at the slower link.
    pub fn grant_budget(&self, i: usize, j: usize) -> u64 {
        budget(self.slot_ps, self.link_rate[i].min(self.link_rate[j]))
    }

    pub fn step(&mut self) -> SlotTrace {
        let s = self.slot;
        let t0 = s * self.slot_ps;
        let t1 = t0 + self.slot_ps;
        let mut trace = SlotTrace {
            slot: s,
            applied: None,
            transfers: Vec::new(),
            arrivals: 0,
            snapshot: None,
            departed: Vec::new(),
        };

        if self.pending.front().is_some_and(|(d, _)| d.slot + self.depth == s) {
            let (d, g) = self.pending.pop_front().expect("front exists");
            for grant in &g.grants {
                let (i, j) = (grant.input, grant.output);
                let rate = self.link_rate[i].min(self.link_rate[j]);
                let start = t0.max(self.free_out[i]).max(self.free_in[j]);
                let queued = self.cards[i].voq_len(j, grant.priority) > 0;
                if queued && start >= t1 {
                    self.link_busy_grants += 1;
                    continue;
                }
                let allowance = grant.byte_budget.min(budget(t1 - start, rate));
                let (src, dst) = pair_mut(&mut self.cards, i, j);
                let tr = fabric_transfer(grant, src, dst, allowance, start, rate);
                if tr.packets > 0 {
                    let end = start + (tr.bytes as f64 * PS_PER_NS as f64 / rate).ceil() as Time;
                    self.free_out[i] = end;
                    self.free_in[j] = end;
                }
                trace.transfers.push((*grant, tr));
            }
            trace.applied = Some((d, g));
        }

        if s < self.duration {
            for a in self.traffic.until(t1) {
                let id = self.next_id;
                self.next_id += 1;
                self.stats.arrival(id, a.size, a.time);
                let (card, local) = self.locate[usize::from(a.port)].expect("source port is mapped");
                let pkt = Packet::new(id, a.headers, a.size, a.time, a.port, a.flow, self.bounds)
                    .expect("sizes are checked against the bounds");
                self.cards[card].card_ingress(pkt, local, a.time);
                trace.arrivals += 1;
            }
        }

        self.stats.voq_series.push(self.cards.iter().map(|c| c.max_voq_bytes()).max().unwrap_or(0));
        if let Some(ms) = &self.ms {
            let snap = snapshot_demand(&self.cards, s);
            let budgets: Vec<Vec<u64>> = (0..self.cards.len())
                .map(|i| (0..self.cards.len()).map(|j| self.grant_budget(i, j)).collect())
                .collect();
            let grants = schedule(&snap, ms, &self.order, &|i, j| budgets[i][j]).expect("dimensions agree");
            trace.snapshot = Some(snap.clone());
            self.pending.push_back((snap, grants));
        }

        for card in &mut self.cards {
            for local in 0..card.num_ports() {
                trace.departed.extend(card.card_egress_drain(local, t1));
            }
        }
        for p in &trace.departed {
            self.stats.departure(p);
        }
        self.slot += 1;
        trace
    }

    /// Runs the arrival phase and then drains until the switch is empty or
    /// the drain cap is reached.
    pub fn run(self) -> StatsReport {
        self.run_with(|_| {})
    }

    /// [`run`](Self::run), handing every slot's trace to `observe`.
    pub fn run_with(mut self, mut observe: impl FnMut(&SlotTrace)) -> StatsReport {
        while self.slot < self.duration {
            observe(&self.step());
        }
        let mut drained = 0;
        while self.in_flight() > 0 && drained < self.drain_cap {
            observe(&self.step());
            drained += 1;
        }
        self.finish(drained)
    }

    fn finish(self, drained: u64) -> StatsReport {
        let mut t = Totals { link_busy_grants: self.link_busy_grants, ..Totals::default() };
        for c in &self.cards {
            t.wasted_grants += c.counters.wasted_grants;
            t.drops += c.counters.drops();
            t.emitted += c.counters.emitted;
            t.in_flight += c.in_flight();
            t.internal_leaks += c.counters.internal_leaks;
        }
        self.stats.finish(self.mode, self.slot, drained, t)
    }
}

fn budget(span_ps: Time, bytes_per_ns: f64) -> u64 {
    (span_ps as f64 * bytes_per_ns / PS_PER_NS as f64).floor() as u64
}

/// Runs the experiment in its configured mode.
pub fn run(exp: &Experiment) -> Result<StatsReport, SimError> {
    Ok(Simulation::new(exp)?.run())
}

/// Runs the same traffic through the whole program on a single card.
pub fn run_baseline(exp: &Experiment) -> Result<StatsReport, SimError> {
    let mut e = exp.clone();
    e.cfg.mode = Mode::Baseline;
    run(&e)
}
