// SPDX-License-Identifier: Apache-2.0

use std::collections::{HashMap, VecDeque};

use super::packet::{serialization_ps, Packet, Time, PS_PER_NS};
use crate::p4ir::{Disposition, Executable};
use crate::sched::{Grant, NUM_PRIORITIES};
use crate::xlate::{card_of_virtual, is_internal, virtual_port, DEFAULT_INTERNAL_ETHERTYPE};

/// Which port number a card's program sees for physical arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortNumbering {
    /// Index of the port on its card (translated programs).
    Local,
    /// Switch-wide id (the monolithic program).
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CardConfig {
    /// Constant charged for each program execution.
    pub processing: Time,
    /// Tail-drop threshold per VOQ; unbounded when `None`.
    pub voq_cap_bytes: Option<u64>,
    pub internal_ethertype: u16,
    pub numbering: PortNumbering,
}

impl Default for CardConfig {
    fn default() -> Self {
        CardConfig {
            processing: 0,
            voq_cap_bytes: None,
            internal_ethertype: DEFAULT_INTERNAL_ETHERTYPE,
            numbering: PortNumbering::Local,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CardCounters {
    pub received: u64,
    pub parse_drops: u64,
    pub program_drops: u64,
    pub voq_tail_drops: u64,
    /// Disposition named a port this card cannot reach.
    pub misdelivered: u64,
    pub local_forwarded: u64,
    pub fabric_enqueued: u64,
    pub fabric_sent: u64,
    pub fabric_received: u64,
    pub wasted_grants: u64,
    pub emitted: u64,
    /// Emitted frames still carrying the internal EtherType. Always 0.
    pub internal_leaks: u64,
}

impl CardCounters {
    pub fn drops(&self) -> u64 {
        self.parse_drops + self.program_drops + self.voq_tail_drops + self.misdelivered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Parse,
    Program,
    VoqFull,
    Misdelivered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngressEvent {
    Local { port: u16 },
    Fabric { dest: usize, pcp: u8 },
    Dropped(DropReason),
}

#[derive(Debug, Clone)]
struct EgressPort {
    global: u16,
    rate_gbps: f64,
    /// Ordered by ready time, then insertion.
    fifo: VecDeque<Packet>,
    busy_until: Time,
}

#[derive(Debug, Clone, Default)]
struct Voq {
    packets: VecDeque<Packet>,
    bytes: u64,
}

/// One line card: its program, 8(N-1) VOQs and per-port egress FIFOs.
#[derive(Debug, Clone)]
pub struct LineCardState {
    pub id: usize,
    n: usize,
    exec: Executable,
    ports: Vec<EgressPort>,
    local_of: HashMap<u16, u16>,
    voqs: Vec<Voq>,
    config: CardConfig,
    pub counters: CardCounters,
}

impl LineCardState {
    /// `ports` lists (global id, rate in Gb/s) in local-index order.
    pub fn new(id: usize, n: usize, exec: Executable, ports: &[(u16, f64)], config: CardConfig) -> Self {
        LineCardState {
            id,
            n,
            exec,
            local_of: ports.iter().enumerate().map(|(l, &(g, _))| (g, l as u16)).collect(),
            ports: ports
                .iter()
                .map(|&(global, rate_gbps)| EgressPort { global, rate_gbps, fifo: VecDeque::new(), busy_until: 0 })
                .collect(),
            voqs: vec![Voq::default(); NUM_PRIORITIES * n.saturating_sub(1)],
            config,
            counters: CardCounters::default(),
        }
    }

    pub fn num_cards(&self) -> usize {
        self.n
    }

    pub fn voq_count(&self) -> usize {
        self.voqs.len()
    }

    pub fn num_ports(&self) -> usize {
        self.ports.len()
    }

    pub fn port_global(&self, local: usize) -> u16 {
        self.ports[local].global
    }

    pub fn port_rate(&self, local: usize) -> f64 {
        self.ports[local].rate_gbps
    }

    pub fn local_of(&self, global: u16) -> Option<u16> {
        self.local_of.get(&global).copied()
    }

    pub fn executable(&self) -> &Executable {
        &self.exec
    }

    fn voq_index(&self, dest: usize, pcp: u8) -> usize {
        assert!(dest != self.id && dest < self.n, "card {} has no VOQ toward {dest}", self.id);
        let slot = if dest < self.id { dest } else { dest - 1 };
        slot * NUM_PRIORITIES + usize::from(pcp)
    }

    pub fn voq_bytes(&self, dest: usize, pcp: u8) -> u64 {
        self.voqs[self.voq_index(dest, pcp)].bytes
    }

    pub fn voq_len(&self, dest: usize, pcp: u8) -> usize {
        self.voqs[self.voq_index(dest, pcp)].packets.len()
    }

    pub fn voq_packets(&self, dest: usize, pcp: u8) -> impl Iterator<Item = &Packet> {
        self.voqs[self.voq_index(dest, pcp)].packets.iter()
    }

    pub fn max_voq_bytes(&self) -> u64 {
        self.voqs.iter().map(|v| v.bytes).max().unwrap_or(0)
    }

    pub fn total_voq_bytes(&self) -> u64 {
        self.voqs.iter().map(|v| v.bytes).sum()
    }

    pub fn fifo_len(&self, local: usize) -> usize {
        self.ports[local].fifo.len()
    }

    pub fn fifo_packets(&self, local: usize) -> impl Iterator<Item = &Packet> {
        self.ports[local].fifo.iter()
    }

    /// Packets held in VOQs or egress FIFOs.
    pub fn in_flight(&self) -> u64 {
        let v: usize = self.voqs.iter().map(|v| v.packets.len()).sum();
        let f: usize = self.ports.iter().map(|p| p.fifo.len()).sum();
        (v + f) as u64
    }

    fn enqueue_egress(&mut self, local: u16, pkt: Packet) {
        let fifo = &mut self.ports[usize::from(local)].fifo;
        let at = fifo.partition_point(|q| q.ready <= pkt.ready);
        fifo.insert(at, pkt);
    }

    /// Runs the card program on a packet received at `local` and queues the
    /// result locally or in a VOQ.
    pub fn card_ingress(&mut self, mut pkt: Packet, local: u16, now: Time) -> IngressEvent {
        self.counters.received += 1;
        let port = match self.config.numbering {
            PortNumbering::Local => local,
            PortNumbering::Global => self.ports[usize::from(local)].global,
        };
        let out = self.exec.execute(&pkt.bytes, port);
        let egress = match out.disposition {
            Disposition::Forward(p) => p,
            Disposition::Drop if out.parse_error.is_some() => {
                self.counters.parse_drops += 1;
                return IngressEvent::Dropped(DropReason::Parse);
            }
            Disposition::Drop => {
                self.counters.program_drops += 1;
                return IngressEvent::Dropped(DropReason::Program);
            }
        };
        pkt.bytes = out.bytes;
        pkt.pcp = out.meta.pcp;
        pkt.ready = now + self.config.processing;
        if let Some(dest) = card_of_virtual(egress).filter(|&d| d < self.n && d != self.id) {
            let idx = self.voq_index(dest, pkt.pcp);
            let size = u64::from(pkt.size());
            let voq = &mut self.voqs[idx];
            if self.config.voq_cap_bytes.is_some_and(|cap| voq.bytes + size > cap) {
                self.counters.voq_tail_drops += 1;
                return IngressEvent::Dropped(DropReason::VoqFull);
            }
            voq.bytes += size;
            voq.packets.push_back(pkt);
            self.counters.fabric_enqueued += 1;
            return IngressEvent::Fabric { dest, pcp: out.meta.pcp };
        }
        match self.local_of(egress) {
            Some(l) => {
                self.enqueue_egress(l, pkt);
                self.counters.local_forwarded += 1;
                IngressEvent::Local { port: egress }
            }
            None => {
                self.counters.misdelivered += 1;
                IngressEvent::Dropped(DropReason::Misdelivered)
            }
        }
    }

    /// Handles a packet delivered over the fabric from card `from` at `at`.
    fn fabric_receive(&mut self, pkt: Packet, from: usize, at: Time) {
        self.counters.fabric_received += 1;
        let out = self.exec.execute(&pkt.bytes, virtual_port(from));
        match out.disposition {
            Disposition::Forward(p) if self.local_of(p).is_some() => {
                let local = self.local_of(p).unwrap();
                let pkt = Packet { bytes: out.bytes, ready: at + self.config.processing, ..pkt };
                self.enqueue_egress(local, pkt);
            }
            _ => self.counters.misdelivered += 1,
        }
    }

    /// Emits packets from the port FIFO whose transmission starts before
    /// `until`. A transmission may finish after `until`.
    pub fn card_egress_drain(&mut self, local: usize, until: Time) -> Vec<Packet> {
        let ethertype = self.config.internal_ethertype;
        let port = &mut self.ports[local];
        let mut out = Vec::new();
        while let Some(head) = port.fifo.front() {
            let start = port.busy_until.max(head.ready);
            if start >= until {
                break;
            }
            let mut pkt = port.fifo.pop_front().expect("head exists");
            let done = start + serialization_ps(pkt.size(), port.rate_gbps);
            port.busy_until = done;
            pkt.departure = Some(done);
            if is_internal(&pkt.bytes, ethertype) {
                self.counters.internal_leaks += 1;
            }
            out.push(pkt);
        }
        self.counters.emitted += out.len() as u64;
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Transfer {
    pub packets: u32,
    pub bytes: u64,
}

/// Moves whole packets from the granted VOQ of `src` to `dst`.
///
/// Packets are taken while the cumulative size stays within `budget`; the
/// head packet always moves. Each packet reaches `dst` once its last byte
/// has crossed a link of `bytes_per_ns` starting at `start`.
pub fn fabric_transfer(
    grant: &Grant,
    src: &mut LineCardState,
    dst: &mut LineCardState,
    budget: u64,
    start: Time,
    bytes_per_ns: f64,
) -> Transfer {
    assert_eq!((grant.input, grant.output), (src.id, dst.id), "grant applied to the wrong cards");
    let idx = src.voq_index(dst.id, grant.priority);
    let mut moved = Transfer::default();
    if src.voqs[idx].packets.is_empty() {
        src.counters.wasted_grants += 1;
        return moved;
    }
    while let Some(head) = src.voqs[idx].packets.front() {
        let size = u64::from(head.size());
        if moved.packets > 0 && moved.bytes + size > budget {
            break;
        }
        let pkt = src.voqs[idx].packets.pop_front().expect("head exists");
        src.voqs[idx].bytes -= size;
        moved.packets += 1;
        moved.bytes += size;
        let at = start + (moved.bytes as f64 * PS_PER_NS as f64 / bytes_per_ns).ceil() as Time;
        src.counters.fabric_sent += 1;
        dst.fabric_receive(pkt, src.id, at);
    }
    moved
}

/// Mutable references to two distinct cards.
pub fn pair_mut(cards: &mut [LineCardState], i: usize, j: usize) -> (&mut LineCardState, &mut LineCardState) {
    assert_ne!(i, j);
    if i < j {
        let (a, b) = cards.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = cards.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}
