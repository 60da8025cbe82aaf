//! Distributed graph processing on top of the orchestration substrate.
//!
//! Edges are ingested through two contention-detection rounds (keyed by
//! source, then by destination). The merged meta-task sets are frozen
//! into per-vertex *source trees* (broadcast fabric for vertex values)
//! and *destination trees* (reduction fabric for write-backs); edge
//! storage is fixed wherever the first round left the wrapped edges.
//! [`engine::dist_edge_map`] then runs frontier rounds in sparse or dense
//! mode over those frozen structures.

pub mod algos;
pub mod engine;
pub mod gen;
pub mod ingest;
pub mod io;
pub mod oracle;
pub mod subset;

use thiserror::Error;

pub use engine::{choose_mode, dist_edge_map, EdgeMapSpec, EdgeMapStats, GraphCluster, Mode};
pub use ingest::{ingest, IngestConfig};
pub use subset::DistVertexSubset;

/// One directed edge with its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: u32, dst: u32, weight: f64) -> Self {
        Self { src, dst, weight }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex id {id} out of range for n={n}")]
    VertexOutOfRange { id: u32, n: usize },
    #[error("start vertex {start} out of range for n={n}")]
    BadStart { start: u32, n: usize },
    #[error("negative edge weight {weight}")]
    NegativeWeight { weight: f64 },
    #[error("graph has no vertices")]
    Empty,
    #[error(transparent)]
    Orch(#[from] crate::orchestrate::OrchError),
    #[error("malformed graph file at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Contiguous vertex ranges, one per machine, balanced by out-degree
/// sums so local edge scans stay comparable across machines.
#[derive(Debug, Clone)]
pub struct VertexPartition {
    /// `bounds[i]..bounds[i+1]` is machine i's range; len = P + 1.
    bounds: Vec<u32>,
}

impl VertexPartition {
    /// Split `0..n` so per-machine out-degree sums are approximately
    /// equal (prefix walk against the ideal share).
    pub fn degree_balanced(outdeg: &[u32], p: usize) -> Self {
        let n = outdeg.len();
        let total: u64 = outdeg.iter().map(|&d| d as u64).sum();
        let mut bounds = Vec::with_capacity(p + 1);
        bounds.push(0u32);
        let mut cum = 0u64;
        let mut v = 0usize;
        for machine in 1..p {
            let target = (machine as u64 * total) / p as u64;
            while v < n && cum < target && (n - v) > (p - machine) {
                cum += outdeg[v] as u64;
                v += 1;
            }
            bounds.push(v as u32);
        }
        bounds.push(n as u32);
        Self { bounds }
    }

    pub fn num_machines(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn n(&self) -> usize {
        *self.bounds.last().unwrap() as usize
    }

    pub fn owner_of(&self, v: u32) -> usize {
        debug_assert!((v as usize) < self.n());
        // Upper bound over bounds[1..]: the first range ending past v.
        let mut lo = 0usize;
        let mut hi = self.num_machines() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.bounds[mid + 1] > v {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Machine i's vertex range as `lo..hi`.
    pub fn range(&self, machine: usize) -> std::ops::Range<u32> {
        self.bounds[machine]..self.bounds[machine + 1]
    }
}

/// Shared immutable graph metadata available to the driver and to every
/// machine (vertex counts, degrees, partition, frozen tree depths).
#[derive(Debug)]
pub struct GraphMeta {
    pub n: usize,
    /// Directed edge count as stored.
    pub m: u64,
    pub partition: VertexPartition,
    pub outdeg: Vec<u32>,
    pub indeg: Vec<u32>,
    pub min_weight: f64,
    /// Depth of each frozen source tree (vertices without trees absent).
    pub src_depth: std::collections::BTreeMap<u32, u32>,
    pub dst_depth: std::collections::BTreeMap<u32, u32>,
    pub chunk_size: u32,
}
