// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::p4ir::{from_json, LoadError};

pub const MIN_CARDS: usize = 2;
pub const MAX_CARDS: usize = 8;
/// Global port ids must fit the last octet of an encoded MAC.
pub const MAX_GLOBAL_PORT: u16 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub cards: Vec<CardSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardSpec {
    pub id: usize,
    pub link: LinkSpec,
    #[serde(default)]
    pub ports: Vec<PortSpec>,
}

/// PCI-e generation and lane count of a card's fabric link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub gen: u8,
    pub lanes: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub global_id: u16,
    pub rate_gbps: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TopologyError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0} card(s); between {MIN_CARDS} and {MAX_CARDS} required")]
    CardCount(usize),
    #[error("card ids must be 0..N-1 in order; found {found} at position {position}")]
    CardId { position: usize, found: usize },
    #[error("card {0} has no ports")]
    EmptyCard(usize),
    #[error("global port {0} is declared more than once")]
    DuplicatePort(u16),
    #[error("global port {0} exceeds {MAX_GLOBAL_PORT}")]
    PortOutOfRange(u16),
    #[error("port {port} has non-positive rate {rate} Gb/s")]
    BadRate { port: u16, rate: f64 },
    #[error("card {card}: unsupported PCI-e link gen {gen} x{lanes}")]
    BadLink { card: usize, gen: u8, lanes: u8 },
}

impl Topology {
    /// Parses and enforces every topology invariant.
    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let t: Topology = from_json(text)?;
        t.validate()?;
        Ok(t)
    }

    /// Parses with the relaxed rules used for capacity checks: card count
    /// and per-card port presence are not enforced.
    pub fn parse_relaxed(text: &str) -> Result<Topology, TopologyError> {
        let t: Topology = from_json(text)?;
        t.validate_relaxed()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if !(MIN_CARDS..=MAX_CARDS).contains(&self.cards.len()) {
            return Err(TopologyError::CardCount(self.cards.len()));
        }
        self.validate_relaxed()?;
        if let Some(c) = self.cards.iter().find(|c| c.ports.is_empty()) {
            return Err(TopologyError::EmptyCard(c.id));
        }
        Ok(())
    }

    fn validate_relaxed(&self) -> Result<(), TopologyError> {
        let mut seen = BTreeSet::new();
        for (position, c) in self.cards.iter().enumerate() {
            if c.id != position {
                return Err(TopologyError::CardId { position, found: c.id });
            }
            if !matches!(c.link.gen, 1..=3) || !matches!(c.link.lanes, 1 | 2 | 4 | 8 | 16) {
                return Err(TopologyError::BadLink { card: c.id, gen: c.link.gen, lanes: c.link.lanes });
            }
            for p in &c.ports {
                if p.global_id > MAX_GLOBAL_PORT {
                    return Err(TopologyError::PortOutOfRange(p.global_id));
                }
                if !(p.rate_gbps > 0.0 && p.rate_gbps.is_finite()) {
                    return Err(TopologyError::BadRate { port: p.global_id, rate: p.rate_gbps });
                }
                if !seen.insert(p.global_id) {
                    return Err(TopologyError::DuplicatePort(p.global_id));
                }
            }
        }
        Ok(())
    }

    pub fn num_cards(&self) -> usize {
        self.cards.len()
    }

    pub fn port_map(&self) -> PortMap {
        PortMap::new(self)
    }

    pub fn port_rate_gbps(&self, global: u16) -> Option<f64> {
        self.cards.iter().flat_map(|c| &c.ports).find(|p| p.global_id == global).map(|p| p.rate_gbps)
    }

    /// `cards` cards of `ports_per_card` ports each, numbered card-major.
    pub fn uniform(cards: usize, ports_per_card: usize, link: LinkSpec, rate_gbps: f64) -> Topology {
        Topology {
            cards: (0..cards)
                .map(|id| CardSpec {
                    id,
                    link,
                    ports: (0..ports_per_card)
                        .map(|j| PortSpec { global_id: (id * ports_per_card + j) as u16, rate_gbps })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortLocation {
    pub card: usize,
    pub local: u16,
}

/// Bijection between global port ids and (card, local index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortMap {
    by_global: BTreeMap<u16, PortLocation>,
    by_card: Vec<Vec<u16>>,
}

impl PortMap {
    pub fn new(topo: &Topology) -> PortMap {
        let mut by_global = BTreeMap::new();
        let by_card = topo
            .cards
            .iter()
            .enumerate()
            .map(|(card, c)| {
                c.ports
                    .iter()
                    .enumerate()
                    .map(|(local, p)| {
                        by_global.insert(p.global_id, PortLocation { card, local: local as u16 });
                        p.global_id
                    })
                    .collect()
            })
            .collect();
        PortMap { by_global, by_card }
    }

    pub fn locate(&self, global: u16) -> Option<PortLocation> {
        self.by_global.get(&global).copied()
    }

    pub fn card_of(&self, global: u16) -> Option<usize> {
        self.locate(global).map(|l| l.card)
    }

    pub fn global(&self, card: usize, local: u16) -> Option<u16> {
        self.by_card.get(card)?.get(usize::from(local)).copied()
    }

    /// Global ids of `card`'s ports in local-index order.
    pub fn card_ports(&self, card: usize) -> &[u16] {
        &self.by_card[card]
    }

    pub fn num_cards(&self) -> usize {
        self.by_card.len()
    }

    pub fn contains(&self, global: u16) -> bool {
        self.by_global.contains_key(&global)
    }

    pub fn all_ports(&self) -> impl Iterator<Item = u16> + '_ {
        self.by_global.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn bundled_topologies() {
        let t = Topology::parse(bundled::TESTBED_TOPOLOGY).unwrap();
        assert_eq!(t.num_cards(), 2);
        let m = t.port_map();
        assert_eq!(m.locate(9), Some(PortLocation { card: 1, local: 1 }));
        assert_eq!(m.global(1, 1), Some(9));
        assert_eq!(m.card_ports(0), &[0, 1, 2, 3, 4, 5, 6, 7]);
        let q = Topology::parse(bundled::QUAD_TOPOLOGY).unwrap();
        assert_eq!(q, Topology::uniform(4, 4, LinkSpec { gen: 3, lanes: 4 }, 10.0));
    }

    #[test]
    fn invariants() {
        let link = LinkSpec { gen: 3, lanes: 8 };
        assert_eq!(Topology::uniform(1, 4, link, 10.0).validate(), Err(TopologyError::CardCount(1)));
        assert_eq!(Topology::uniform(9, 1, link, 10.0).validate(), Err(TopologyError::CardCount(9)));
        assert_eq!(Topology::uniform(2, 0, link, 10.0).validate(), Err(TopologyError::EmptyCard(0)));
        assert_eq!(Topology::uniform(2, 129, link, 10.0).validate(), Err(TopologyError::PortOutOfRange(256)));

        let mut t = Topology::uniform(2, 2, link, 10.0);
        t.cards[1].ports[0].global_id = 0;
        assert_eq!(t.validate(), Err(TopologyError::DuplicatePort(0)));

        let mut t = Topology::uniform(2, 2, link, 10.0);
        t.cards.swap(0, 1);
        assert!(matches!(t.validate(), Err(TopologyError::CardId { .. })));

        let mut t = Topology::uniform(2, 2, link, 10.0);
        t.cards[0].link.lanes = 3;
        assert!(matches!(t.validate(), Err(TopologyError::BadLink { .. })));
    }

    #[test]
    fn relaxed_parse_allows_empty_cards() {
        let text = r#"{"cards": [{"id": 0, "link": {"gen": 1, "lanes": 1}, "ports": []}]}"#;
        assert!(Topology::parse(text).is_err());
        assert!(Topology::parse_relaxed(text).is_ok());
    }

    #[test]
    fn schema_errors_have_paths() {
        let text = r#"{"cards": [{"id": 0, "link": {"gen": 1, "lanes": 1, "x": 0}, "ports": []}]}"#;
        match Topology::parse(text) {
            Err(TopologyError::Load(e)) => assert_eq!(e.path, "cards[0].link.x"),
            other => panic!("{other:?}"),
        }
    }
}
