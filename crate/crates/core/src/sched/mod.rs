// SPDX-License-Identifier: Apache-2.0

//! Fabric scheduling: per-priority demand matrices and the greedy
//! highest-priority-first maximum-weight matcher.

mod matching;

use std::fmt;

use thiserror::Error;

pub use matching::{enumerate_matchings, max_weight_matching, Matching, MatchingSet, MAX_N};

use crate::switchcore::LineCardState;

pub const NUM_PRIORITIES: usize = 8;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SchedError {
    #[error("card count {0} outside 1..={MAX_N}")]
    CardCount(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("priority order must be a permutation of 0..8: {0:?}")]
    PriorityOrder([u8; NUM_PRIORITIES]),
}

/// N x N matrix of queued bytes; the diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DemandMatrix {
    n: usize,
    data: Vec<u64>,
}

impl DemandMatrix {
    pub fn zeros(n: usize) -> Self {
        DemandMatrix { n, data: vec![0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.n + j]
    }

    /// Sets an off-diagonal entry. Diagonal writes are ignored.
    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        if i != j {
            self.data[i * self.n + j] = v;
        }
    }

    #[cfg(test)]
    pub(crate) fn set_unchecked(&mut self, i: usize, j: usize, v: u64) {
        self.data[i * self.n + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.data.chunks_exact(self.n.max(1))
    }
}

/// The eight per-priority demand matrices captured at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DemandMatrixSet {
    /// Slot at whose end the snapshot was taken.
    pub slot: u64,
    matrices: Vec<DemandMatrix>,
}

impl DemandMatrixSet {
    pub fn zeros(n: usize, slot: u64) -> Self {
        DemandMatrixSet { slot, matrices: vec![DemandMatrix::zeros(n); NUM_PRIORITIES] }
    }

    pub fn n(&self) -> usize {
        self.matrices[0].n()
    }

    pub fn priority(&self, p: usize) -> &DemandMatrix {
        &self.matrices[p]
    }

    pub fn priority_mut(&mut self, p: usize) -> &mut DemandMatrix {
        &mut self.matrices[p]
    }

    pub fn get(&self, p: usize, i: usize, j: usize) -> u64 {
        self.matrices[p].get(i, j)
    }

    pub fn is_zero(&self) -> bool {
        self.matrices.iter().all(DemandMatrix::is_zero)
    }
}

/// Order in which priority classes are served, highest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PriorityOrder([u8; NUM_PRIORITIES]);

impl PriorityOrder {
    /// 7 highest, 0 lowest.
    pub const NUMERIC: PriorityOrder = PriorityOrder([7, 6, 5, 4, 3, 2, 1, 0]);
    /// IEEE 802.1p traffic-type order: PCP 1 (background) ranks below PCP 0.
    pub const IEEE_8021P: PriorityOrder = PriorityOrder([7, 6, 5, 4, 3, 2, 0, 1]);

    pub fn new(order: [u8; NUM_PRIORITIES]) -> Result<Self, SchedError> {
        let mut seen = [false; NUM_PRIORITIES];
        for &p in &order {
            if usize::from(p) >= NUM_PRIORITIES || std::mem::replace(&mut seen[usize::from(p)], true) {
                return Err(SchedError::PriorityOrder(order));
            }
        }
        Ok(PriorityOrder(order))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&p| usize::from(p))
    }

    /// Position of `pcp` in the service order (0 = served first).
    pub fn rank(&self, pcp: u8) -> usize {
        self.0.iter().position(|&p| p == pcp).expect("order is a permutation")
    }
}

impl Default for PriorityOrder {
    fn default() -> Self {
        PriorityOrder::NUMERIC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grant {
    pub input: usize,
    pub output: usize,
    pub priority: u8,
    pub byte_budget: u64,
}

impl fmt::Display for Grant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{} p{} ({}B)", self.input, self.output, self.priority, self.byte_budget)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct GrantSet {
    /// Slot of the snapshot the grants were computed from.
    pub slot: u64,
    pub grants: Vec<Grant>,
}

impl GrantSet {
    /// True when every input and every output appears at most once.
    pub fn is_valid_matching(&self, n: usize) -> bool {
        let mut ins = vec![false; n];
        let mut outs = vec![false; n];
        self.grants.iter().all(|g| {
            g.input < n
                && g.output < n
                && !std::mem::replace(&mut ins[g.input], true)
                && !std::mem::replace(&mut outs[g.output], true)
        })
    }
}

/// Greedy per-priority scheduling. For each class in `order`, computes the
/// max-weight matching of that class's demand over the ports left unmarked
/// by higher classes, then marks both endpoints of every granted edge.
/// `budget(i, j)` gives the byte budget of a grant from card i to card j.
pub fn schedule(
    d: &DemandMatrixSet,
    ms: &MatchingSet,
    order: &PriorityOrder,
    budget: &dyn Fn(usize, usize) -> u64,
) -> Result<GrantSet, SchedError> {
    let n = d.n();
    let mut in_marked = vec![false; n];
    let mut out_marked = vec![false; n];
    let mut grants = Vec::new();
    for p in order.iter() {
        let avail_in: Vec<usize> = (0..n).filter(|&i| !in_marked[i]).collect();
        if avail_in.is_empty() {
            break;
        }
        let dp = d.priority(p);
        if dp.is_zero() {
            continue;
        }
        let avail_out: Vec<usize> = (0..n).filter(|&j| !out_marked[j]).collect();
        let m = max_weight_matching(dp, &avail_in, &avail_out, ms)?;
        for (i, j) in m.pairs {
            in_marked[i] = true;
            out_marked[j] = true;
            grants.push(Grant { input: i, output: j, priority: p as u8, byte_budget: budget(i, j) });
        }
    }
    Ok(GrantSet { slot: d.slot, grants })
}

/// Queued bytes per (source card, destination card, priority) across all cards.
pub fn snapshot_demand(cards: &[LineCardState], slot: u64) -> DemandMatrixSet {
    let mut d = DemandMatrixSet::zeros(cards.len(), slot);
    for (i, card) in cards.iter().enumerate() {
        for j in (0..cards.len()).filter(|&j| j != i) {
            for p in 0..NUM_PRIORITIES {
                d.priority_mut(p).set(i, j, card.voq_bytes(j, p as u8));
            }
        }
    }
    d
}
