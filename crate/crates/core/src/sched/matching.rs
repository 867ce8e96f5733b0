// SPDX-License-Identifier: Apache-2.0

use std::sync::{Arc, OnceLock};

use super::{DemandMatrix, SchedError};

/// Largest card count the enumeration supports.
pub const MAX_N: usize = 8;

static PERMUTATIONS: [OnceLock<Arc<[u8]>>; MAX_N + 1] = [const { OnceLock::new() }; MAX_N + 1];

/// All permutations of `0..k` in lexicographic order, flattened.
fn permutations(k: usize) -> Arc<[u8]> {
    PERMUTATIONS[k]
        .get_or_init(|| {
            let mut cur: Vec<u8> = (0..k as u8).collect();
            let mut out = Vec::with_capacity((1..=k).product::<usize>() * k);
            loop {
                out.extend_from_slice(&cur);
                if !next_permutation(&mut cur) {
                    break;
                }
            }
            out.into()
        })
        .clone()
}

fn next_permutation(v: &mut [u8]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Cached solution space: every perfect matching of the complete bipartite
/// graph on k inputs and k outputs, for each k up to N.
#[derive(Debug, Clone)]
pub struct MatchingSet {
    n: usize,
    by_size: Vec<Arc<[u8]>>,
}

impl MatchingSet {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of matchings of size `k`.
    pub fn count(&self, k: usize) -> usize {
        self.by_size[k].len().checked_div(k).unwrap_or(1)
    }

    /// Matchings of size `k`; entry `r` of each slice is the column matched
    /// to row `r`.
    pub fn matchings(&self, k: usize) -> impl Iterator<Item = &[u8]> {
        self.by_size[k].chunks_exact(k.max(1))
    }
}

/// Builds (or fetches from the process-wide cache) the matching set for `n` cards.
pub fn enumerate_matchings(n: usize) -> Result<MatchingSet, SchedError> {
    if !(1..=MAX_N).contains(&n) {
        return Err(SchedError::CardCount(n));
    }
    Ok(MatchingSet { n, by_size: (0..=n).map(permutations).collect() })
}

/// A set of (input, output) pairs with its total weight.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub weight: u64,
}

/// Exhaustive max-weight matching over the available rows and columns.
///
/// `avail_in` and `avail_out` are taken in ascending order. Ties go to the
/// first permutation in lexicographic order; zero-weight edges are removed
/// from the result.
pub fn max_weight_matching(
    d: &DemandMatrix,
    avail_in: &[usize],
    avail_out: &[usize],
    ms: &MatchingSet,
) -> Result<Matching, SchedError> {
    let k = avail_in.len();
    if d.n() != ms.n() {
        return Err(SchedError::Dimension(format!("{0}x{0} matrix for a {1}-card matching set", d.n(), ms.n())));
    }
    if k != avail_out.len() {
        return Err(SchedError::Dimension(format!("{k} inputs against {} outputs", avail_out.len())));
    }
    if k > ms.n() || avail_in.iter().chain(avail_out).any(|&x| x >= d.n()) {
        return Err(SchedError::Dimension(format!("available set exceeds {} cards", d.n())));
    }
    if k == 0 {
        return Ok(Matching::default());
    }
    let mut best: Option<&[u8]> = None;
    let mut best_w = 0u64;
    for perm in ms.matchings(k) {
        let w: u64 = perm.iter().enumerate().map(|(r, &c)| d.get(avail_in[r], avail_out[usize::from(c)])).sum();
        if w > best_w {
            best_w = w;
            best = Some(perm);
        }
    }
    let Some(perm) = best else {
        return Ok(Matching::default());
    };
    let pairs = perm
        .iter()
        .enumerate()
        .map(|(r, &c)| (avail_in[r], avail_out[usize::from(c)]))
        .filter(|&(i, j)| d.get(i, j) > 0)
        .collect();
    Ok(Matching { pairs, weight: best_w })
}
