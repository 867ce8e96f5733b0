// SPDX-License-Identifier: Apache-2.0

//! PCI-e link bandwidth and the non-blocking capacity check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::xlate::{LinkSpec, Topology};

pub const LANE_WIDTHS: [u8; 5] = [1, 2, 4, 8, 16];

/// GB/s by generation (rows) and lane width (columns), as published.
const TABLE: [[f64; 5]; 3] = [[0.5, 1.0, 2.0, 4.0, 8.0], [1.0, 2.0, 4.0, 8.0, 16.0], [2.0, 4.0, 8.0, 16.0, 32.0]];

/// Per-lane, per-direction payload rate after line coding, GB/s.
const PHYSICAL_LANE: [f64; 3] = [0.25, 0.5, 8.0 * 128.0 / 130.0 / 8.0];

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("unsupported PCI-e link: gen {gen} x{lanes}")]
pub struct PcieError {
    pub gen: u8,
    pub lanes: u8,
}

fn cell(gen: u8, lanes: u8) -> Result<(usize, usize), PcieError> {
    let g = usize::from(gen).checked_sub(1).filter(|&g| g < 3);
    let l = LANE_WIDTHS.iter().position(|&w| w == lanes);
    g.zip(l).ok_or(PcieError { gen, lanes })
}

/// Link bandwidth in GB/s from the PCI-e evolution table.
pub fn link_bandwidth(gen: u8, lanes: u8) -> Result<f64, PcieError> {
    let (g, l) = cell(gen, lanes)?;
    Ok(TABLE[g][l])
}

/// How the table value maps to usable capacity in one direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkRateModel {
    /// The table value is the capacity of each direction.
    #[default]
    Table,
    /// The table value is the sum of both directions.
    AggregateSplit,
    /// Signalling rate minus line coding (8b/10b for Gen1/2, 128b/130b for Gen3).
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcieLink {
    pub gen: u8,
    pub lanes: u8,
    /// Table value, GB/s.
    pub bandwidth: f64,
}

impl PcieLink {
    pub fn new(gen: u8, lanes: u8) -> Result<Self, PcieError> {
        Ok(PcieLink { gen, lanes, bandwidth: link_bandwidth(gen, lanes)? })
    }

    /// Capacity of one direction in GB/s, which is also bytes per ns.
    pub fn per_direction(&self, model: LinkRateModel) -> f64 {
        match model {
            LinkRateModel::Table => self.bandwidth,
            LinkRateModel::AggregateSplit => self.bandwidth / 2.0,
            LinkRateModel::Physical => PHYSICAL_LANE[usize::from(self.gen - 1)] * f64::from(self.lanes),
        }
    }

    pub fn per_direction_gbps(&self, model: LinkRateModel) -> f64 {
        self.per_direction(model) * 8.0
    }
}

impl TryFrom<LinkSpec> for PcieLink {
    type Error = PcieError;

    fn try_from(s: LinkSpec) -> Result<Self, PcieError> {
        PcieLink::new(s.gen, s.lanes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CardCapacity {
    pub card: usize,
    pub ports_gbps: f64,
    pub link_gbps: f64,
    pub utilization: f64,
    pub nonblocking: bool,
}

/// Compares each card's total port rate against its link capacity in one
/// direction; links are dual simplex, so each direction is checked alone.
pub fn check_nonblocking(topo: &Topology, model: LinkRateModel) -> Result<Vec<CardCapacity>, PcieError> {
    topo.cards
        .iter()
        .map(|c| {
            let link = PcieLink::try_from(c.link)?.per_direction_gbps(model);
            let ports: f64 = c.ports.iter().map(|p| p.rate_gbps).sum();
            Ok(CardCapacity {
                card: c.id,
                ports_gbps: ports,
                link_gbps: link,
                utilization: ports / link,
                nonblocking: ports <= link,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xlate::{CardSpec, PortSpec};

    #[test]
    fn table_values() {
        assert_eq!(link_bandwidth(1, 8), Ok(4.0));
        assert_eq!(link_bandwidth(2, 4), Ok(4.0));
        assert_eq!(link_bandwidth(3, 8), Ok(16.0));
        assert_eq!(link_bandwidth(3, 16), Ok(32.0));
        assert_eq!(link_bandwidth(4, 8), Err(PcieError { gen: 4, lanes: 8 }));
        assert!(link_bandwidth(1, 3).is_err());
        assert!(link_bandwidth(0, 1).is_err());
    }

    #[test]
    fn rate_models() {
        let l = PcieLink::new(3, 8).unwrap();
        assert_eq!(l.per_direction_gbps(LinkRateModel::Table), 128.0);
        assert_eq!(l.per_direction_gbps(LinkRateModel::AggregateSplit), 64.0);
        let phys = l.per_direction(LinkRateModel::Physical);
        assert!((phys - 7.877).abs() < 1e-3, "{phys}");
        assert_eq!(PcieLink::new(1, 1).unwrap().per_direction(LinkRateModel::Physical), 0.25);
    }

    fn card(gen: u8, lanes: u8, rates: &[f64]) -> Topology {
        Topology {
            cards: vec![CardSpec {
                id: 0,
                link: LinkSpec { gen, lanes },
                ports: rates.iter().enumerate().map(|(i, &r)| PortSpec { global_id: i as u16, rate_gbps: r }).collect(),
            }],
        }
    }

    #[test]
    fn worked_capacity_checks() {
        let r = check_nonblocking(&card(3, 8, &[10.0; 8]), LinkRateModel::Table).unwrap();
        assert!(r[0].nonblocking);
        assert_eq!(r[0].utilization, 0.625);
        let r = check_nonblocking(&card(2, 8, &[100.0; 2]), LinkRateModel::Table).unwrap();
        assert!(!r[0].nonblocking);
        assert_eq!((r[0].ports_gbps, r[0].link_gbps), (200.0, 64.0));
        let r = check_nonblocking(&card(1, 1, &[]), LinkRateModel::Table).unwrap();
        assert!(r[0].nonblocking);
        assert_eq!(r[0].utilization, 0.0);
    }
}
