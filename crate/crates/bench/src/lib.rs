//! Shared fixtures for the criterion benchmarks.

use tdorch_core::bsp::{Cluster, ClusterConfig};
use tdorch_core::kv::{gen_zipf_tasks, ZipfSpec};
use tdorch_core::orchestrate::OrchMachine;
use tdorch_core::task::TaskContext;

pub fn kv_cluster(p: usize, seed: u64) -> Cluster<OrchMachine<i64>> {
    Cluster::new(ClusterConfig::new(p, seed), move |m| OrchMachine::new(seed, m))
}

pub fn zipf_tasks(p: usize, gamma: f64, per_machine: u64, seed: u64) -> Vec<Vec<TaskContext>> {
    let spec = ZipfSpec {
        gamma,
        key_space: 1 << 20,
        tasks_per_machine: per_machine,
        seed,
    };
    gen_zipf_tasks(&spec, p).expect("valid spec")
}
