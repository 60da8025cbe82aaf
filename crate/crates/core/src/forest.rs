//! Communication forest: P balanced F-ary trees, one rooted per machine.
//!
//! Trees are never materialized. Node coordinates are `(root, bfs_index)`
//! where BFS index 0 is the root and the last P indices are the leaves;
//! leaf `k` of every tree is physical machine `k`. The root node is hosted
//! by the root machine itself (aggregation must terminate at the data
//! owner); every other internal node is a virtual node hosted by a hashed
//! machine. The hash is a pure function of `(seed, root, bfs_index)`, so
//! every machine computes the same answer.

use crate::rng::mix_words;
use thiserror::Error;

#[derive(Debug, Clone, Copy)]
pub struct ForestConfig {
    pub num_machines: usize,
    pub fanout: usize,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(num_machines: usize, fanout: usize, seed: u64) -> Self {
        assert!(num_machines >= 1, "need at least one machine");
        assert!(fanout >= 2, "fanout must be at least 2");
        Self {
            num_machines,
            fanout,
            seed,
        }
    }

    /// Number of levels below the root: `ceil(log_F P)`.
    pub fn height(&self) -> usize {
        self.level_sizes().len() - 1
    }

    /// Nodes per level, root level first. Built by repeatedly grouping the
    /// leaf level in blocks of F, so every level is `ceil` of the one
    /// below it and the tree is balanced for any P.
    pub fn level_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![self.num_machines as u64];
        while *sizes.last().unwrap() > 1 {
            let next = sizes.last().unwrap().div_ceil(self.fanout as u64);
            sizes.push(next);
        }
        sizes.reverse();
        sizes
    }

    pub fn total_nodes(&self) -> u64 {
        self.level_sizes().iter().sum()
    }
}

/// A node of one communication tree, identified by its BFS index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeNodeId {
    pub root: usize,
    pub bfs_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentRoute {
    Parent(TreeNodeId),
    RootReached,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForestError {
    #[error("bfs index {index} out of range for tree with {total} nodes")]
    InvalidNode { index: u64, total: u64 },
    #[error("root machine {root} out of range for P={p}")]
    InvalidRoot { root: usize, p: usize },
}

/// `(level, offset within level)` for a BFS index.
fn locate(sizes: &[u64], bfs_index: u64) -> Option<(usize, u64)> {
    let mut start = 0;
    for (level, &size) in sizes.iter().enumerate() {
        if bfs_index < start + size {
            return Some((level, bfs_index - start));
        }
        start += size;
    }
    None
}

fn level_start(sizes: &[u64], level: usize) -> u64 {
    sizes[..level].iter().sum()
}

impl ForestConfig {
    fn check(&self, node: TreeNodeId) -> Result<(usize, u64), ForestError> {
        if node.root >= self.num_machines {
            return Err(ForestError::InvalidRoot {
                root: node.root,
                p: self.num_machines,
            });
        }
        let sizes = self.level_sizes();
        locate(&sizes, node.bfs_index).ok_or(ForestError::InvalidNode {
            index: node.bfs_index,
            total: sizes.iter().sum(),
        })
    }

    /// The leaf node of `machine` in the tree rooted at `root`.
    pub fn leaf_of(&self, root: usize, machine: usize) -> TreeNodeId {
        debug_assert!(machine < self.num_machines);
        let sizes = self.level_sizes();
        TreeNodeId {
            root,
            bfs_index: level_start(&sizes, sizes.len() - 1) + machine as u64,
        }
    }

    /// Which physical machine hosts `node`.
    ///
    /// Leaves map to their machine, the root node maps to the root
    /// machine, and interior virtual nodes map through the seeded hash.
    pub fn host_of(&self, node: TreeNodeId) -> Result<usize, ForestError> {
        let (level, offset) = self.check(node)?;
        let height = self.height();
        if level == height {
            return Ok(offset as usize);
        }
        if node.bfs_index == 0 {
            return Ok(node.root);
        }
        let h = mix_words(self.seed, &[node.root as u64, node.bfs_index]);
        Ok((h % self.num_machines as u64) as usize)
    }

    /// BFS parent of `node`, or a marker when already at the root.
    pub fn parent_route(&self, node: TreeNodeId) -> Result<ParentRoute, ForestError> {
        let (level, offset) = self.check(node)?;
        if level == 0 {
            return Ok(ParentRoute::RootReached);
        }
        let sizes = self.level_sizes();
        let parent_offset = offset / self.fanout as u64;
        Ok(ParentRoute::Parent(TreeNodeId {
            root: node.root,
            bfs_index: level_start(&sizes, level - 1) + parent_offset,
        }))
    }

    /// Level of `node` (0 = root, `height()` = leaves).
    pub fn level_of(&self, node: TreeNodeId) -> Result<usize, ForestError> {
        Ok(self.check(node)?.0)
    }
}

/// Fanout choice for a batch of `n_tasks` over `p` machines:
/// `clamp(floor(n / (P * ceil(log2 max(P,2))^2)), 2, max(P,2))`.
pub fn default_fanout(n_tasks: u64, p: usize) -> usize {
    let p_eff = p.max(2) as u64;
    let log2p = (64 - (p_eff - 1).leading_zeros()) as u64; // ceil(log2 p_eff)
    let denom = p as u64 * log2p * log2p;
    let raw = n_tasks.checked_div(denom).unwrap_or(0);
    raw.clamp(2, p_eff) as usize
}
