// SPDX-License-Identifier: Apache-2.0

//! Packet-at-a-time execution of a translated switch: ingress card program,
//! fabric hop, egress card program. Used to check translation against the
//! monolithic interpreter without any timing model.

use thiserror::Error;

use super::encap::is_internal;
use super::translate::{card_of_virtual, virtual_port, TranslationResult};
use crate::p4ir::{BuildError, Disposition, Executable, TableEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    /// Never left the ingress card (includes drops there).
    Local {
        card: usize,
    },
    Fabric {
        from: usize,
        to: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributedOutcome {
    pub disposition: Disposition,
    /// Bytes emitted on the egress port; empty when dropped.
    pub bytes: Vec<u8>,
    pub path: Path,
    /// The frame as it crossed the fabric, if it did.
    pub fabric_bytes: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("port {0} is not in the topology")]
    UnknownPort(u16),
    #[error("card {card} forwarded to port {port}, which belongs to no reachable destination")]
    BadEgress { card: usize, port: u16 },
    #[error("frame sent over the fabric from card {0} without the internal EtherType")]
    NotEncapsulated(usize),
}

/// One executable per card plus the port map.
#[derive(Debug, Clone)]
pub struct DistributedSwitch {
    cards: Vec<Executable>,
    result: TranslationResult,
}

impl DistributedSwitch {
    pub fn new(result: TranslationResult, switch_entries: &[TableEntry]) -> Result<Self, BuildError> {
        let cards = (0..result.cards.len())
            .map(|c| Executable::new(&result.cards[c].program, &result.card_entries(c, switch_entries)))
            .collect::<Result<_, _>>()?;
        Ok(DistributedSwitch { cards, result })
    }

    pub fn card(&self, card: usize) -> &Executable {
        &self.cards[card]
    }

    pub fn translation(&self) -> &TranslationResult {
        &self.result
    }

    pub fn process(&self, bytes: &[u8], ingress: u16) -> Result<DistributedOutcome, RoutingError> {
        let map = &self.result.port_map;
        let at = map.locate(ingress).ok_or(RoutingError::UnknownPort(ingress))?;
        let first = self.cards[at.card].execute(bytes, at.local);
        let port = match first.disposition {
            Disposition::Drop => return Ok(dropped(Path::Local { card: at.card })),
            Disposition::Forward(p) => p,
        };
        let Some(dest) = card_of_virtual(port) else {
            if map.card_of(port) != Some(at.card) {
                return Err(RoutingError::BadEgress { card: at.card, port });
            }
            return Ok(DistributedOutcome {
                disposition: first.disposition,
                bytes: first.bytes,
                path: Path::Local { card: at.card },
                fabric_bytes: None,
            });
        };
        if dest >= self.cards.len() || dest == at.card {
            return Err(RoutingError::BadEgress { card: at.card, port });
        }
        if !is_internal(&first.bytes, self.result.internal_ethertype) {
            return Err(RoutingError::NotEncapsulated(at.card));
        }
        let path = Path::Fabric { from: at.card, to: dest };
        let second = self.cards[dest].execute(&first.bytes, virtual_port(at.card));
        match second.disposition {
            Disposition::Drop => Ok(DistributedOutcome { fabric_bytes: Some(first.bytes), ..dropped(path) }),
            Disposition::Forward(p) if map.card_of(p) == Some(dest) => Ok(DistributedOutcome {
                disposition: second.disposition,
                bytes: second.bytes,
                path,
                fabric_bytes: Some(first.bytes),
            }),
            Disposition::Forward(p) => Err(RoutingError::BadEgress { card: dest, port: p }),
        }
    }
}

fn dropped(path: Path) -> DistributedOutcome {
    DistributedOutcome { disposition: Disposition::Drop, bytes: Vec::new(), path, fabric_bytes: None }
}
