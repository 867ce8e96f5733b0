// SPDX-License-Identifier: Apache-2.0

//! Documents shipped with the library: the L3 router switch program, its
//! table entries, and two reference topologies.

use crate::p4ir::{load_entries, load_program, Program, TableEntry};

pub const L3_ROUTER_PROGRAM: &str = include_str!("../assets/l3_router.program.json");
pub const L3_ROUTER_ENTRIES: &str = include_str!("../assets/l3_router.entries.json");
/// Two cards with eight 10G ports each on Gen3 x8 links.
pub const TESTBED_TOPOLOGY: &str = include_str!("../assets/testbed_2x8.topology.json");
/// Four cards with four 10G ports each on Gen3 x4 links.
pub const QUAD_TOPOLOGY: &str = include_str!("../assets/quad_4x4.topology.json");

/// LPM, Ethernet FIB and VLAN tagging tables; routes 10.0.k.0/24 to port k
/// for k in 0..16.
pub fn l3_router() -> Program {
    load_program(L3_ROUTER_PROGRAM).expect("bundled program loads")
}

pub fn l3_router_entries() -> Vec<TableEntry> {
    load_entries(L3_ROUTER_ENTRIES).expect("bundled entries load").entries
}
