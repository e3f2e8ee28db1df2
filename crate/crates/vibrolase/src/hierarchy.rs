//! Multi-index bookkeeping for the auxiliary density operator hierarchy.
//!
//! Indices are vectors `n = (n_1 .. n_K)` with `|n| = sum n_k <= depth`,
//! enumerated in graded lexicographic order so index 0 is always the physical
//! (all-zero) entry. For every index the table stores its neighbors one
//! excitation up and down in each mode.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct HierarchyIndex {
    pub modes: usize,
    pub depth: usize,
    /// Multi-indices, graded-lex ordered; entry 0 is the zero index.
    pub indices: Vec<Vec<u8>>,
    /// `up[i][k]`: position of `indices[i] + e_k`, if within depth.
    pub up: Vec<Vec<Option<usize>>>,
    /// `down[i][k]`: position of `indices[i] - e_k`, if `n_k > 0`.
    pub down: Vec<Vec<Option<usize>>>,
}

impl HierarchyIndex {
    pub fn new(modes: usize, depth: usize) -> Self {
        let mut indices: Vec<Vec<u8>> = Vec::new();
        let mut cur = vec![vec![0u8; modes]];
        indices.push(vec![0u8; modes]);
        for _ in 1..=depth {
            let mut next: Vec<Vec<u8>> = Vec::new();
            for n in &cur {
                // raise only at or after the last nonzero slot to enumerate
                // each index exactly once
                let start = n
                    .iter()
                    .rposition(|&v| v > 0)
                    .unwrap_or(0);
                for k in start..modes {
                    let mut m = n.clone();
                    m[k] += 1;
                    next.push(m);
                }
            }
            indices.extend(next.iter().cloned());
            cur = next;
        }
        let lookup: HashMap<Vec<u8>, usize> = indices
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let mut up = Vec::with_capacity(indices.len());
        let mut down = Vec::with_capacity(indices.len());
        for n in &indices {
            let mut u = vec![None; modes];
            let mut d = vec![None; modes];
            let total: usize = n.iter().map(|&v| v as usize).sum();
            for k in 0..modes {
                if total < depth {
                    let mut m = n.clone();
                    m[k] += 1;
                    u[k] = lookup.get(&m).copied();
                }
                if n[k] > 0 {
                    let mut m = n.clone();
                    m[k] -= 1;
                    d[k] = lookup.get(&m).copied();
                }
            }
            up.push(u);
            down.push(d);
        }
        Self {
            modes,
            depth,
            indices,
            up,
            down,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn order(&self, i: usize) -> usize {
        self.indices[i].iter().map(|&v| v as usize).sum()
    }
}

/// `C(modes + depth, depth)`: number of multi-indices with `|n| <= depth`.
pub fn hierarchy_size(modes: usize, depth: usize) -> usize {
    // binomial without overflow for the small arguments used here
    let mut acc: u128 = 1;
    for i in 1..=depth.min(modes + depth) {
        acc = acc * (modes + i) as u128 / i as u128;
    }
    acc as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_stars_and_bars() {
        assert_eq!(HierarchyIndex::new(1, 2).len(), 3);
        assert_eq!(HierarchyIndex::new(5, 3).len(), 56);
        assert_eq!(HierarchyIndex::new(0, 4).len(), 1);
        for (m, d) in [(1, 2), (5, 3), (3, 4), (10, 2)] {
            assert_eq!(HierarchyIndex::new(m, d).len(), hierarchy_size(m, d));
        }
    }

    #[test]
    fn zero_index_first_and_neighbors_consistent() {
        let h = HierarchyIndex::new(3, 3);
        assert!(h.indices[0].iter().all(|&v| v == 0));
        for i in 0..h.len() {
            for k in 0..h.modes {
                if let Some(j) = h.up[i][k] {
                    assert_eq!(h.down[j][k], Some(i));
                    assert_eq!(h.order(j), h.order(i) + 1);
                }
                if let Some(j) = h.down[i][k] {
                    assert_eq!(h.up[j][k], Some(i));
                }
            }
        }
    }

    #[test]
    fn indices_unique() {
        let h = HierarchyIndex::new(4, 3);
        let set: std::collections::HashSet<_> = h.indices.iter().collect();
        assert_eq!(set.len(), h.len());
    }
}
