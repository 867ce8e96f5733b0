// SPDX-License-Identifier: Apache-2.0

//! Oracles and generators shared by the integration suites.

#![allow(dead_code)]

use rand::Rng;

use hymos_core::frame::{Frame, Ipv4};
use hymos_core::sim::{ArrivalProcess, Destinations, Dist, Experiment, TrafficProfile};
use hymos_core::xlate::DEFAULT_INTERNAL_ETHERTYPE;

/// Maximum total weight of an assignment in a square non-negative matrix,
/// by the O(n^3) Hungarian algorithm with potentials. Independent of the
/// enumeration scheduler.
pub fn hungarian_max(w: &[Vec<u64>]) -> u64 {
    let n = w.len();
    if n == 0 {
        return 0;
    }
    let top = w.iter().flatten().copied().max().unwrap_or(0) as i128;
    let cost = |i: usize, j: usize| top - w[i][j] as i128;
    let inf = i128::MAX / 4;
    // 1-based rows and columns; p[j] is the row matched to column j.
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| w[p[j] - 1][j - 1]).sum()
}

/// Exhaustive maximum over all permutations, used to check the oracle.
pub fn brute_max(w: &[Vec<u64>]) -> u64 {
    fn go(w: &[Vec<u64>], row: usize, used: &mut Vec<bool>) -> u64 {
        if row == w.len() {
            return 0;
        }
        let mut best = 0;
        for j in 0..w.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w.len()])
}

/// A random square matrix with zero diagonal and some zero cells.
pub fn random_demand(rng: &mut impl Rng, n: usize) -> Vec<Vec<u64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (i == j, rng.gen_range(0..4)) {
                    (true, _) | (_, 0) => 0,
                    (_, 1) => rng.gen_range(1..4) * 800,
                    _ => rng.gen_range(1..100_000),
                })
                .collect()
        })
        .collect()
}

/// A random frame exercising every path of the bundled router: routed,
/// host-route drops, unrouted, tagged and untagged, non-IPv4, expiring TTLs
/// and truncated header stacks. Never carries the internal EtherType.
pub fn random_frame(rng: &mut impl Rng) -> Vec<u8> {
    let dst = match rng.gen_range(0..20) {
        0..=11 => u32::from_be_bytes([10, 0, rng.gen_range(0..16), rng.gen()]),
        12..=14 => u32::from_be_bytes([10, 1, rng.gen_range(0..4), rng.gen_range(0..6)]),
        15..=16 => u32::from_be_bytes([10, rng.gen(), rng.gen(), rng.gen()]),
        _ => rng.gen(),
    };
    let mut ip = Ipv4::new(rng.gen(), dst);
    ip.ttl = rng.gen();
    ip.identification = rng.gen();
    ip.total_len = rng.gen_range(20..1500);
    let mut f = Frame::ipv4(rng.gen::<u64>() & 0xffff_ffff_ffff, rng.gen::<u64>() & 0xffff_ffff_ffff, ip);
    if rng.gen_bool(0.5) {
        f = f.with_vlan(rng.gen_range(0..8), rng.gen_range(0..4096));
    }
    if rng.gen_bool(0.1) {
        f.ipv4 = None;
        f.ether_type = loop {
            let t: u16 = rng.gen();
            if t != DEFAULT_INTERNAL_ETHERTYPE && t != 0x0800 {
                break t;
            }
        };
    }
    let mut bytes = f.to_bytes();
    let payload = rng.gen_range(0..24);
    bytes.extend((0..payload).map(|_| rng.gen::<u8>()));
    if rng.gen_bool(0.05) {
        let keep = rng.gen_range(0..bytes.len());
        bytes.truncate(keep);
    }
    bytes
}

/// Uniform traffic over the testbed's reference sources and sinks.
pub fn testbed_profile(process: ArrivalProcess, load: f64, size: u32) -> TrafficProfile {
    TrafficProfile {
        sources: Some(Experiment::testbed_sources()),
        sinks: Some(Experiment::testbed_sinks()),
        process,
        load,
        size: Dist::Fixed(size),
        destinations: Destinations::Uniform,
        pcp: Dist::Fixed(0),
    }
}
