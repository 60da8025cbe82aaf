//! Distributed vertex subsets: one local set per machine, each switching
//! between a sorted sparse set and a bitmap over the machine's range.

use super::VertexPartition;
use std::collections::BTreeSet;

/// Dense representation kicks in above 1/16 of the local range.
const DENSE_FRACTION: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalSet {
    Sparse(BTreeSet<u32>),
    Dense {
        lo: u32,
        bits: Vec<u64>,
        count: usize,
    },
}

impl LocalSet {
    fn new_for_range(members: BTreeSet<u32>, lo: u32, hi: u32) -> Self {
        let range = (hi - lo) as usize;
        if range >= DENSE_FRACTION && members.len() > range / DENSE_FRACTION {
            let mut bits = vec![0u64; range.div_ceil(64)];
            let count = members.len();
            for v in members {
                let i = (v - lo) as usize;
                bits[i / 64] |= 1 << (i % 64);
            }
            LocalSet::Dense { lo, bits, count }
        } else {
            LocalSet::Sparse(members)
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LocalSet::Sparse(s) => s.len(),
            LocalSet::Dense { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, v: u32) -> bool {
        match self {
            LocalSet::Sparse(s) => s.contains(&v),
            LocalSet::Dense { lo, bits, .. } => {
                let i = (v - lo) as usize;
                bits.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
            }
        }
    }

    /// Ascending member iteration.
    pub fn iter(&self) -> Box<dyn Iterator<Item = u32> + '_> {
        match self {
            LocalSet::Sparse(s) => Box::new(s.iter().copied()),
            LocalSet::Dense { lo, bits, .. } => {
                let lo = *lo;
                Box::new(bits.iter().enumerate().flat_map(move |(wi, &word)| {
                    (0..64)
                        .filter(move |b| word & (1 << b) != 0)
                        .map(move |b| lo + (wi * 64 + b) as u32)
                }))
            }
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LocalSet::Dense { .. })
    }
}

/// A vertex subset distributed over the partition; every member lives on
/// its owning machine's local set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistVertexSubset {
    locals: Vec<LocalSet>,
    total: u64,
}

impl DistVertexSubset {
    pub fn empty(p: usize) -> Self {
        Self {
            locals: (0..p).map(|_| LocalSet::Sparse(BTreeSet::new())).collect(),
            total: 0,
        }
    }

    /// Build from global vertex ids, routing each to its owner and
    /// picking the representation per machine.
    pub fn from_vertices(
        partition: &VertexPartition,
        vertices: impl IntoIterator<Item = u32>,
    ) -> Self {
        let p = partition.num_machines();
        let mut members: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); p];
        for v in vertices {
            members[partition.owner_of(v)].insert(v);
        }
        Self::from_members(partition, members)
    }

    /// Build from per-machine member sets (already owner-routed).
    pub fn from_members(partition: &VertexPartition, members: Vec<BTreeSet<u32>>) -> Self {
        let mut total = 0u64;
        let locals = members
            .into_iter()
            .enumerate()
            .map(|(m, set)| {
                debug_assert!(set
                    .iter()
                    .all(|&v| partition.range(m).contains(&v)));
                total += set.len() as u64;
                let r = partition.range(m);
                LocalSet::new_for_range(set, r.start, r.end)
            })
            .collect();
        Self { locals, total }
    }

    pub fn all_vertices(partition: &VertexPartition) -> Self {
        Self::from_vertices(partition, 0..partition.n() as u32)
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn local(&self, machine: usize) -> &LocalSet {
        &self.locals[machine]
    }

    pub fn contains(&self, partition: &VertexPartition, v: u32) -> bool {
        self.locals[partition.owner_of(v)].contains(v)
    }

    /// All members in ascending global order.
    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.locals.iter().flat_map(|l| l.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(n: usize, p: usize) -> VertexPartition {
        VertexPartition::degree_balanced(&vec![1; n], p)
    }

    #[test]
    fn representations_agree() {
        let partition = part(256, 2);
        // Small set stays sparse; big set on machine 0 goes dense.
        let small = DistVertexSubset::from_vertices(&partition, [1u32, 7, 130]);
        assert!(!small.local(0).is_dense());
        assert!(small.contains(&partition, 7));
        assert!(!small.contains(&partition, 8));

        let big = DistVertexSubset::from_vertices(&partition, 0..100u32);
        assert!(big.local(0).is_dense());
        assert_eq!(big.len(), 100);
        for v in 0..100u32 {
            assert!(big.contains(&partition, v));
        }
        let collected: Vec<u32> = big.iter().collect();
        assert_eq!(collected, (0..100u32).collect::<Vec<_>>());
    }

    #[test]
    fn all_vertices_has_everything() {
        let partition = part(50, 4);
        let all = DistVertexSubset::all_vertices(&partition);
        assert_eq!(all.len(), 50);
        assert_eq!(all.iter().count(), 50);
    }
}
