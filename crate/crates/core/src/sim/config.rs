// SPDX-License-Identifier: Apache-2.0

//! Experiment documents and their resolution into runnable form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundled;
use crate::p4ir::{from_json, load_entries, load_program, LoadError, Program, TableEntry};
use crate::sched::PriorityOrder;
use crate::switchcore::{LinkRateModel, DEFAULT_MAX_SIZE, DEFAULT_MIN_SIZE};
use crate::xlate::{Topology, TopologyError, DEFAULT_INTERNAL_ETHERTYPE};

/// Prefix naming a document shipped with the library instead of a file.
pub const BUNDLED_PREFIX: &str = "bundled:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hymos,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Evenly spaced packets with a random initial phase per port.
    Cbr,
    /// Time is cut into cells of one packet time at line rate; each cell
    /// carries a packet with probability `load`.
    Bernoulli,
}

/// A fixed value or a finite distribution over values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dist<T> {
    Fixed(T),
    Mix { mix: Vec<(T, f64)> },
}

impl<T: Copy> Dist<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Dist::Fixed(v) => vec![*v],
            Dist::Mix { mix } => mix.iter().map(|(v, _)| *v).collect(),
        }
    }

    fn check(&self, what: &str) -> Result<(), ConfigError> {
        if let Dist::Mix { mix } = self {
            let sum: f64 = mix.iter().map(|(_, p)| p).sum();
            if mix.is_empty() || mix.iter().any(|(_, p)| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(ConfigError::Invalid(format!("{what} probabilities must be non-negative and sum to 1")));
            }
        }
        Ok(())
    }
}

/// A sink port with the subnet routed to it. A bare port number `k`
/// stands for subnet 10.0.k.0/24.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SinkSpec {
    Port(u16),
    Subnet { port: u16, subnet: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destinations {
    Uniform,
    /// Per-source weights over `sinks`, in sink order.
    Weights(Vec<SourceWeights>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceWeights {
    pub source: u16,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    /// Ports that generate traffic; every port when omitted.
    #[serde(default)]
    pub sources: Option<Vec<u16>>,
    /// Destination ports and subnets; every port when omitted.
    #[serde(default)]
    pub sinks: Option<Vec<SinkSpec>>,
    pub process: ArrivalProcess,
    /// Fraction of each source port's line rate.
    pub load: f64,
    pub size: Dist<u32>,
    #[serde(default = "uniform")]
    pub destinations: Destinations,
    #[serde(default = "pcp_zero")]
    pub pcp: Dist<u8>,
}

fn uniform() -> Destinations {
    Destinations::Uniform
}

fn pcp_zero() -> Dist<u8> {
    Dist::Fixed(0)
}

/// The on-disk experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: String,
    pub program: String,
    pub entries: String,
    pub traffic: TrafficProfile,
    #[serde(default = "default_slot_ns")]
    pub slot_ns: u64,
    #[serde(default = "default_depth")]
    pub pipeline_depth: u64,
    pub duration_slots: u64,
    /// Defaults to 10% of the duration.
    #[serde(default)]
    pub warmup_slots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub processing_ns: u64,
    #[serde(default)]
    pub voq_cap_bytes: Option<u64>,
    #[serde(default)]
    pub link_model: LinkRateModel,
    #[serde(default)]
    pub priority_order: PriorityOrderName,
    #[serde(default = "default_ethertype")]
    pub internal_ethertype: u16,
    #[serde(default = "default_size_bounds")]
    pub size_bounds: (u32, u32),
    /// Upper bound on extra slots spent draining queues after `duration_slots`.
    #[serde(default)]
    pub drain_cap_slots: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityOrderName {
    #[default]
    Numeric,
    Ieee8021p,
}

impl PriorityOrderName {
    pub fn order(self) -> PriorityOrder {
        match self {
            PriorityOrderName::Numeric => PriorityOrder::NUMERIC,
            PriorityOrderName::Ieee8021p => PriorityOrder::IEEE_8021P,
        }
    }
}

fn default_slot_ns() -> u64 {
    1200
}
fn default_depth() -> u64 {
    1
}
fn default_mode() -> Mode {
    Mode::Hymos
}
fn default_ethertype() -> u16 {
    DEFAULT_INTERNAL_ETHERTYPE
}
fn default_size_bounds() -> (u32, u32) {
    (DEFAULT_MIN_SIZE, DEFAULT_MAX_SIZE)
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{what}: {source}")]
    Load { what: String, source: LoadError },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("unknown bundled document `{0}`")]
    UnknownBundled(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// A fully resolved experiment: documents loaded, defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub topology: Topology,
    pub program: Program,
    pub entries: Vec<TableEntry>,
    pub cfg: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        from_json(text).map_err(|source| ConfigError::Load { what: "experiment".into(), source })
    }

    /// Reads the config file and every document it references; relative
    /// paths resolve against the config file's directory.
    pub fn load_file(path: &Path) -> Result<Experiment, ConfigError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text)?.resolve(base)
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_slots.unwrap_or(self.duration_slots / 10)
    }

    pub fn resolve(self, base: &Path) -> Result<Experiment, ConfigError> {
        let topo_text = document(base, &self.topology, |n| match n {
            "testbed" => Some(bundled::TESTBED_TOPOLOGY),
            "quad" => Some(bundled::QUAD_TOPOLOGY),
            _ => None,
        })?;
        let program_text = document(base, &self.program, |n| (n == "l3_router").then_some(bundled::L3_ROUTER_PROGRAM))?;
        let entries_text = document(base, &self.entries, |n| (n == "l3_router").then_some(bundled::L3_ROUTER_ENTRIES))?;
        let topology = Topology::parse(&topo_text)?;
        let program =
            load_program(&program_text).map_err(|source| ConfigError::Load { what: self.program.clone(), source })?;
        let entries = load_entries(&entries_text)
            .map_err(|source| ConfigError::Load { what: self.entries.clone(), source })?
            .entries;
        let exp = Experiment { topology, program, entries, cfg: self };
        exp.check()?;
        Ok(exp)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn document(base: &Path, name: &str, bundled: impl Fn(&str) -> Option<&'static str>) -> Result<String, ConfigError> {
    match name.strip_prefix(BUNDLED_PREFIX) {
        Some(n) => bundled(n).map(str::to_owned).ok_or_else(|| ConfigError::UnknownBundled(name.into())),
        None => read(&base.join(name)),
    }
}

impl Experiment {
    /// An experiment over the bundled router and testbed topology with the
    /// reference traffic layout: four sources and four sinks per card.
    pub fn testbed(traffic: TrafficProfile, duration_slots: u64, seed: u64) -> Experiment {
        let cfg = ExperimentConfig {
            topology: format!("{BUNDLED_PREFIX}testbed"),
            program: format!("{BUNDLED_PREFIX}l3_router"),
            entries: format!("{BUNDLED_PREFIX}l3_router"),
            traffic,
            slot_ns: default_slot_ns(),
            pipeline_depth: default_depth(),
            duration_slots,
            warmup_slots: None,
            seed,
            mode: Mode::Hymos,
            processing_ns: 0,
            voq_cap_bytes: None,
            link_model: LinkRateModel::Table,
            priority_order: PriorityOrderName::Numeric,
            internal_ethertype: DEFAULT_INTERNAL_ETHERTYPE,
            size_bounds: default_size_bounds(),
            drain_cap_slots: None,
        };
        cfg.resolve(Path::new(".")).expect("bundled experiment resolves")
    }

    pub fn testbed_sources() -> Vec<u16> {
        vec![0, 1, 2, 3, 8, 9, 10, 11]
    }

    pub fn testbed_sinks() -> Vec<SinkSpec> {
        [4, 5, 6, 7, 12, 13, 14, 15].into_iter().map(SinkSpec::Port).collect()
    }

    pub fn sources(&self) -> Vec<u16> {
        self.cfg.traffic.sources.clone().unwrap_or_else(|| self.topology.port_map().all_ports().collect())
    }

    /// Sink ports with their subnets as (address, prefix length).
    pub fn sinks(&self) -> Result<Vec<(u16, u32, u32)>, ConfigError> {
        let specs = match &self.cfg.traffic.sinks {
            Some(s) => s.clone(),
            None => self.topology.port_map().all_ports().map(SinkSpec::Port).collect(),
        };
        specs
            .iter()
            .map(|s| match s {
                SinkSpec::Port(p) => Ok((*p, u32::from_be_bytes([10, 0, *p as u8, 0]), 24)),
                SinkSpec::Subnet { port, subnet } => {
                    let bad = || ConfigError::Invalid(format!("bad subnet `{subnet}`"));
                    let (addr, len) = subnet.split_once('/').ok_or_else(bad)?;
                    let addr: std::net::Ipv4Addr = addr.parse().map_err(|_| bad())?;
                    let len: u32 = len.parse().ok().filter(|l| *l <= 32).ok_or_else(bad)?;
                    Ok((*port, u32::from(addr), len))
                }
            })
            .collect()
    }

    /// Checks everything that can be checked before slot 0.
    pub fn check(&self) -> Result<(), ConfigError> {
        let c = &self.cfg;
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if c.slot_ns == 0 {
            return bad("slot_ns must be positive".into());
        }
        if c.pipeline_depth == 0 {
            return bad("pipeline_depth must be at least 1".into());
        }
        if c.duration_slots <= c.warmup() {
            return bad(format!("duration_slots ({}) must exceed warmup ({})", c.duration_slots, c.warmup()));
        }
        let t = &c.traffic;
        if !(0.0..=1.0).contains(&t.load) {
            return bad(format!("load {} outside [0, 1]", t.load));
        }
        t.size.check("size")?;
        t.pcp.check("pcp")?;
        let (lo, hi) = c.size_bounds;
        if let Some(s) = t.size.values().into_iter().find(|s| *s < lo || *s > hi) {
            return bad(format!("packet size {s} outside {lo}..={hi}"));
        }
        if let Some(p) = t.pcp.values().into_iter().find(|p| *p > 7) {
            return bad(format!("pcp {p} outside 0..=7"));
        }
        let map = self.topology.port_map();
        let sources = self.sources();
        let sinks = self.sinks()?;
        if let Some(p) = sources.iter().chain(sinks.iter().map(|s| &s.0)).find(|p| !map.contains(**p)) {
            return bad(format!("port {p} is not in the topology"));
        }
        if sinks.is_empty() && t.load > 0.0 {
            return bad("traffic needs at least one sink".into());
        }
        if let Destinations::Weights(ws) = &t.destinations {
            for &s in &sources {
                let Some(w) = ws.iter().find(|w| w.source == s) else {
                    return bad(format!("no destination weights for source {s}"));
                };
                let sum: f64 = w.weights.iter().sum();
                if w.weights.len() != sinks.len()
                    || w.weights.iter().any(|x| x.is_nan() || *x < 0.0)
                    || (sum - 1.0).abs() > 1e-9
                {
                    return bad(format!("destination weights of source {s} must cover every sink and sum to 1"));
                }
            }
        }
        Ok(())
    }
}
