// SPDX-License-Identifier: Apache-2.0

//! Synthetic arrivals.
//!
//! Every source port owns a ChaCha8 stream selected by its port number, so
//! the arrivals of one port do not depend on which other ports are active
//! or on the simulated architecture.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ArrivalProcess, ConfigError, Destinations, Dist, Experiment};
use crate::frame::{Frame, Ipv4, ETH_LEN, VLAN_LEN};
use crate::switchcore::{serialization_ps, Time};

/// MAC address the generated frames are sent to.
pub const SWITCH_MAC: u64 = 0x0200_0000_ffff;
/// VLAN id of generated frames.
pub const TRAFFIC_VID: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    /// Time the last byte was received.
    pub time: Time,
    pub port: u16,
    pub headers: Vec<u8>,
    pub size: u32,
    pub pcp: u8,
    /// Sink index the destination address was drawn from.
    pub sink: usize,
    pub flow: u64,
}

#[derive(Debug, Clone)]
struct Sampler<T> {
    values: Vec<T>,
    index: Option<WeightedIndex<f64>>,
}

impl<T: Copy> Sampler<T> {
    fn new(d: &Dist<T>) -> Self {
        match d {
            Dist::Fixed(v) => Sampler { values: vec![*v], index: None },
            Dist::Mix { mix } => Sampler {
                values: mix.iter().map(|m| m.0).collect(),
                index: Some(WeightedIndex::new(mix.iter().map(|m| m.1)).expect("weights checked")),
            },
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> T {
        match &self.index {
            None => self.values[0],
            Some(w) => self.values[w.sample(rng)],
        }
    }
}

#[derive(Debug, Clone)]
struct Source {
    port: u16,
    rate_gbps: f64,
    rng: ChaCha8Rng,
    sizes: Sampler<u32>,
    pcps: Sampler<u8>,
    /// `None` when every weight is zero.
    dests: Option<WeightedIndex<f64>>,
    /// Start of the next CBR packet or Bernoulli cell, in ps.
    cursor: f64,
    pending: Option<Arrival>,
}

/// Lazily generates the merged arrival stream of all sources.
#[derive(Debug, Clone)]
pub struct TrafficGen {
    sources: Vec<Source>,
    sinks: Vec<(u16, u32, u32)>,
    process: ArrivalProcess,
    load: f64,
}

impl TrafficGen {
    pub fn new(exp: &Experiment) -> Result<Self, ConfigError> {
        exp.check()?;
        let t = &exp.cfg.traffic;
        let sinks = exp.sinks()?;
        let mut sources = Vec::new();
        for port in exp.sources() {
            let mut rng = ChaCha8Rng::seed_from_u64(exp.cfg.seed);
            rng.set_stream(u64::from(port));
            let weights: Vec<f64> = match &t.destinations {
                Destinations::Uniform => {
                    let others = sinks.iter().any(|s| s.0 != port);
                    sinks.iter().map(|s| if others && s.0 == port { 0.0 } else { 1.0 }).collect()
                }
                Destinations::Weights(ws) => {
                    ws.iter().find(|w| w.source == port).map(|w| w.weights.clone()).unwrap_or_default()
                }
            };
            let rate_gbps = exp.topology.port_rate_gbps(port).expect("source checked");
            sources.push(Source {
                port,
                rate_gbps,
                dests: WeightedIndex::new(&weights).ok(),
                sizes: Sampler::new(&t.size),
                pcps: Sampler::new(&t.pcp),
                cursor: 0.0,
                pending: None,
                rng,
            });
        }
        let mut gen = TrafficGen { sources, sinks, process: t.process, load: t.load };
        if gen.process == ArrivalProcess::Cbr && gen.load > 0.0 {
            let mean_size = match &t.size {
                Dist::Fixed(v) => f64::from(*v),
                Dist::Mix { mix } => mix.iter().map(|(v, p)| f64::from(*v) * p).sum(),
            };
            for s in &mut gen.sources {
                let gap = mean_size * 8_000.0 / s.rate_gbps / gen.load;
                s.cursor = s.rng.gen::<f64>() * gap;
            }
        }
        Ok(gen)
    }

    pub fn num_sinks(&self) -> usize {
        self.sinks.len()
    }

    pub fn sink_port(&self, sink: usize) -> u16 {
        self.sinks[sink].0
    }

    /// Removes and returns every arrival with `time < until`, ordered by
    /// (time, port).
    pub fn until(&mut self, until: Time) -> Vec<Arrival> {
        let mut out = Vec::new();
        if self.load <= 0.0 || self.sinks.is_empty() {
            return out;
        }
        for i in 0..self.sources.len() {
            loop {
                if self.sources[i].pending.is_none() {
                    let next = self.next_of(i);
                    self.sources[i].pending = next;
                }
                match &self.sources[i].pending {
                    Some(a) if a.time < until => out.push(self.sources[i].pending.take().expect("pending")),
                    _ => break,
                }
            }
        }
        out.sort_by_key(|a| (a.time, a.port));
        out
    }

    fn next_of(&mut self, i: usize) -> Option<Arrival> {
        let (process, load) = (self.process, self.load);
        let sinks = &self.sinks;
        let s = &mut self.sources[i];
        s.dests.as_ref()?;
        loop {
            let size = s.sizes.sample(&mut s.rng);
            let wire = serialization_ps(size, s.rate_gbps) as f64;
            let start = s.cursor;
            let hit = match process {
                ArrivalProcess::Cbr => {
                    s.cursor += wire / load;
                    true
                }
                ArrivalProcess::Bernoulli => {
                    s.cursor += wire;
                    s.rng.gen::<f64>() < load
                }
            };
            if !hit {
                continue;
            }
            let pcp = s.pcps.sample(&mut s.rng);
            let sink = s.dests.as_ref().expect("checked").sample(&mut s.rng);
            let (_, net, len) = sinks[sink];
            let dst = net | host_in(&mut s.rng, len);
            let src = u32::from_be_bytes([10, 200, s.port as u8, s.rng.gen_range(1..=254)]);
            let mut ip = Ipv4::new(src, dst);
            ip.total_len = (size as usize).saturating_sub(ETH_LEN + VLAN_LEN).min(usize::from(u16::MAX)) as u16;
            let headers = Frame::ipv4(0x02cc_0000_0000 | u64::from(s.port), SWITCH_MAC, ip)
                .with_vlan(pcp, TRAFFIC_VID)
                .to_bytes();
            return Some(Arrival {
                time: (start + wire).round() as Time,
                port: s.port,
                headers,
                size,
                pcp,
                sink,
                flow: (u64::from(s.port) << 40) | (u64::from(pcp) << 32) | u64::from(dst),
            });
        }
    }
}

/// A host number inside a subnet of prefix length `len`, avoiding the
/// network and broadcast addresses where the subnet has room.
fn host_in(rng: &mut ChaCha8Rng, len: u32) -> u32 {
    let size = 1u64 << (32 - len);
    if size <= 2 {
        rng.gen_range(0..size) as u32
    } else {
        rng.gen_range(1..size - 1) as u32
    }
}

/// Generates every arrival before `horizon`.
pub fn gen_arrivals(exp: &Experiment, horizon: Time) -> Result<Vec<Arrival>, ConfigError> {
    Ok(TrafficGen::new(exp)?.until(horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{SinkSpec, TrafficProfile};
    use crate::switchcore::PS_PER_NS;

    fn exp(process: ArrivalProcess, load: f64, seed: u64) -> Experiment {
        Experiment::testbed(
            TrafficProfile {
                sources: Some(Experiment::testbed_sources()),
                sinks: Some(Experiment::testbed_sinks()),
                process,
                load,
                size: Dist::Fixed(800),
                destinations: Destinations::Uniform,
                pcp: Dist::Fixed(0),
            },
            1000,
            seed,
        )
    }

    #[test]
    fn cbr_spacing_and_rate() {
        let a = gen_arrivals(&exp(ArrivalProcess::Cbr, 0.8, 1), 1_000_000 * PS_PER_NS).unwrap();
        let port0: Vec<Time> = a.iter().filter(|a| a.port == 0).map(|a| a.time).collect();
        assert!(port0.windows(2).all(|w| w[1] - w[0] == 800_000), "800B at 8 Gb/s is one per 800 ns");
        assert!((1249..=1250).contains(&port0.len()));
        for p in Experiment::testbed_sources() {
            assert!((1249..=1250).contains(&a.iter().filter(|a| a.port == p).count()));
        }
    }

    #[test]
    fn bernoulli_mean_load() {
        let a = gen_arrivals(&exp(ArrivalProcess::Bernoulli, 0.3, 2), 10_000_000 * PS_PER_NS).unwrap();
        let cells = 10_000_000 / 640;
        let rate = a.len() as f64 / (8 * cells) as f64;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    #[test]
    fn ordered_and_deterministic() {
        let e = exp(ArrivalProcess::Bernoulli, 0.5, 3);
        let a = gen_arrivals(&e, 100_000 * PS_PER_NS).unwrap();
        assert!(a.windows(2).all(|w| (w[0].time, w[0].port) <= (w[1].time, w[1].port)));
        assert_eq!(a, gen_arrivals(&e, 100_000 * PS_PER_NS).unwrap());
        assert_ne!(a, gen_arrivals(&exp(ArrivalProcess::Bernoulli, 0.5, 4), 100_000 * PS_PER_NS).unwrap());
    }

    #[test]
    fn incremental_matches_batch() {
        let e = exp(ArrivalProcess::Cbr, 0.6, 5);
        let batch = gen_arrivals(&e, 50_000 * PS_PER_NS).unwrap();
        let mut g = TrafficGen::new(&e).unwrap();
        let mut inc = Vec::new();
        for k in 1..=50 {
            inc.extend(g.until(k * 1_000 * PS_PER_NS));
        }
        assert_eq!(batch, inc);
    }

    #[test]
    fn destinations_fall_in_sink_subnets() {
        let a = gen_arrivals(&exp(ArrivalProcess::Cbr, 1.0, 6), 100_000 * PS_PER_NS).unwrap();
        let sinks = [4u8, 5, 6, 7, 12, 13, 14, 15];
        for x in &a {
            let dst = &x.headers[34..38];
            assert_eq!(&dst[..2], &[10, 0]);
            assert_eq!(dst[2], sinks[x.sink]);
            assert!((1..=254).contains(&dst[3]));
            assert_eq!(x.headers.len(), 38);
        }
    }

    #[test]
    fn zero_load_is_silent() {
        assert!(gen_arrivals(&exp(ArrivalProcess::Cbr, 0.0, 1), 1_000_000_000).unwrap().is_empty());
        let mut e = exp(ArrivalProcess::Cbr, 0.5, 1);
        e.cfg.traffic.sinks = Some(vec![SinkSpec::Port(0)]);
        e.cfg.traffic.sources = Some(vec![0]);
        let a = gen_arrivals(&e, 10_000_000).unwrap();
        assert!(!a.is_empty(), "a lone sink may be the source itself");
    }
}
