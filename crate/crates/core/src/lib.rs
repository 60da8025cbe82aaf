//! Task-data orchestration on a simulated bulk-synchronous cluster.
//!
//! The crate provides:
//!
//! - [`bsp`]: a P-machine superstep simulator with word-granular
//!   communication counters;
//! - [`forest`]: balanced F-ary communication trees with hashed virtual
//!   interior nodes, one rooted per machine;
//! - [`meta`]: chunk-bounded meta-task sets whose cascading merges build
//!   compressed reduction/broadcast trees;
//! - [`orchestrate`]: the four-substage push-pull orchestration over the
//!   simulator, plus [`baselines`] implementing direct-pull, direct-push
//!   and a sorting-based strategy behind the same interface;
//! - [`kv`]: the distributed hash-table microbenchmark with Zipf
//!   workloads;
//! - [`graph`]: a vertex-centric graph engine with ingestion-time tree
//!   construction, sparse/dense edge maps, and five algorithms with
//!   single-machine oracles.

pub mod baselines;
pub mod bsp;
pub mod forest;
pub mod graph;
pub mod kv;
pub mod meta;
pub mod ops;
pub mod orchestrate;
pub mod rng;
pub mod task;
pub mod wire;

pub use bsp::{load_imbalance, Cluster, ClusterConfig, CostCounters, Message, Metric};
pub use forest::{default_fanout, ForestConfig, TreeNodeId};
pub use meta::{Arena, MetaTask, MetaTaskSet};
pub use task::TaskContext;
