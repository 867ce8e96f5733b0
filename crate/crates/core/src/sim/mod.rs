// SPDX-License-Identifier: Apache-2.0

//! Slotted simulation: experiment documents, traffic, the engine, statistics
//! and parameter sweeps.

pub mod config;
pub mod engine;
pub mod stats;
pub mod sweep;
pub mod traffic;

pub use config::*;
pub use engine::{run, run_baseline, SimError, Simulation, SlotTrace};
pub use stats::{percentile, PriorityLatency, StatsReport};
pub use sweep::{render_csv, sweep, SweepParam, SweepRow, CSV_HEADER};
pub use traffic::{gen_arrivals, Arrival, TrafficGen};
