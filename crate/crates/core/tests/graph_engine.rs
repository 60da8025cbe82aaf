//! Ingestion and edge-map behavior: edge placement, tree existence,
//! mode choice and equivalence, and communication shapes.

use std::sync::Arc;

use tdorch_core::graph::gen::gen_ba;
use tdorch_core::graph::io::doubled;
use tdorch_core::graph::{
    choose_mode, dist_edge_map, ingest, DistVertexSubset, Edge, EdgeMapSpec, GraphCluster,
    IngestConfig, Mode,
};

fn ingest_pairs(pairs: &[(u32, u32)], n: usize, p: usize, seed: u64) -> GraphCluster {
    let cfg = IngestConfig::new(p, seed);
    ingest(doubled(pairs), n, &cfg).unwrap()
}

fn star_pairs(leaves: u32) -> Vec<(u32, u32)> {
    (1..=leaves).map(|v| (0, v)).collect()
}

#[test]
fn single_edge_graph_rests_at_source_owner() {
    let cfg = IngestConfig::new(2, 5);
    let gc = ingest(vec![Edge::new(0, 1, 1.0)], 2, &cfg).unwrap();
    let total: usize = gc.cluster.machines().iter().map(|m| m.edges.len()).sum();
    assert_eq!(total, 1);
    let owner = gc.owner_of(0);
    assert_eq!(gc.cluster.machine(owner).edges.len(), 1);
    // Degree 1 < C: no trees anywhere.
    assert!(gc.meta.src_depth.is_empty());
    assert!(gc.meta.dst_depth.is_empty());
}

#[test]
fn path_on_one_machine_is_fully_local() {
    let gc = ingest_pairs(&[(0, 1), (1, 2)], 3, 1, 3);
    let m = gc.cluster.machine(0);
    assert_eq!(m.edges.len(), 4); // both directions of both edges
    assert_eq!(m.by_src.len(), 3);
    assert!(gc.meta.src_depth.is_empty());
}

#[test]
fn star_center_gets_source_tree_and_spread() {
    // K_{1,1000}: center out-degree 1000 >= C = 8.
    let pairs = star_pairs(1000);
    let gc = ingest_pairs(&pairs, 1001, 4, 7);
    assert!(gc.meta.src_depth.contains_key(&0), "center needs a tree");
    // Leaf sources are low degree: no trees for them.
    for v in 1..=1000u32 {
        assert!(!gc.meta.src_depth.contains_key(&v), "leaf {v} treed");
    }
    // The center's edges spread across machines.
    let holders = gc
        .cluster
        .machines()
        .iter()
        .filter(|m| m.by_src.contains_key(&0))
        .count();
    assert!(holders >= 2, "center edges on {holders} machine(s)");
    // Leaf edges are co-located at each leaf's owner.
    for v in [1u32, 500, 1000] {
        let owner = gc.owner_of(v);
        let found = gc
            .cluster
            .machines()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.by_src.contains_key(&v))
            .map(|(i, _)| i)
            .collect::<Vec<_>>();
        assert_eq!(found, vec![owner], "leaf {v}");
    }
    // The center also has a destination tree (in-degree 1000).
    assert!(gc.meta.dst_depth.contains_key(&0));
}

#[test]
fn tree_exists_iff_degree_reaches_chunk_size() {
    // Degrees straddling C = 8: vertices 0..5 with out-degrees 6..=11
    // (each edge also adds in-degree to distinct sinks).
    let mut edges = Vec::new();
    let mut next_sink = 6u32;
    for (i, d) in (6u32..=11).enumerate() {
        for _ in 0..d {
            edges.push(Edge::new(i as u32, next_sink, 1.0));
            next_sink += 1;
        }
    }
    let n = next_sink as usize;
    let cfg = IngestConfig::new(4, 11);
    let gc = ingest(edges, n, &cfg).unwrap();
    for (v, d) in (6u32..=11).enumerate() {
        let has_tree = gc.meta.src_depth.contains_key(&(v as u32));
        assert_eq!(has_tree, d >= 8, "outdeg {d}");
    }
}

#[test]
fn ingest_balances_edge_chunks() {
    let pairs = gen_ba(2000, 8, 3);
    let gc = ingest_pairs(&pairs, 2000, 8, 3);
    let m_dir = pairs.len() * 2;
    let per: Vec<usize> = gc.cluster.machines().iter().map(|m| m.edges.len()).collect();
    assert_eq!(per.iter().sum::<usize>(), m_dir);
    // Load balance bounds the heaviest machine; hub owners may store
    // fewer edges because spilled hub chunks spread everywhere.
    let ideal = m_dir as f64 / 8.0;
    for (i, &c) in per.iter().enumerate() {
        assert!((c as f64) <= 2.0 * ideal, "machine {i}: {c} edges vs ideal {ideal}");
    }
}

// ---------------------------------------------------------------------------
// Mode choice and the passes
// ---------------------------------------------------------------------------

#[test]
fn mode_threshold_is_strict() {
    let pairs: Vec<(u32, u32)> = (0..64).map(|i| (i, (i + 1) % 64)).collect();
    let gc = ingest_pairs(&pairs, 64, 4, 1);
    // Directed degree after doubling: 2 per vertex.
    let one = DistVertexSubset::from_vertices(&gc.meta.partition, [0u32]);
    // deg_sum = 2 < alpha * 4 * 1 with alpha = 1 -> sparse.
    assert_eq!(choose_mode(&gc.meta, &one, 1.0, false), Mode::Sparse);
    // Boundary: alpha = 0.5 makes the threshold exactly 2 -> dense.
    assert_eq!(choose_mode(&gc.meta, &one, 0.5, false), Mode::Dense);
    // Full frontier on a cycle: deg_sum = 2n >= 4n? no; with alpha high
    // it stays sparse, with alpha small it goes dense.
    let all = DistVertexSubset::all_vertices(&gc.meta.partition);
    assert_eq!(choose_mode(&gc.meta, &all, 0.4, false), Mode::Dense);
}

fn sum_spec() -> EdgeMapSpec<Vec<f64>, f64> {
    // States hold one slot per owned vertex (by local offset elsewhere);
    // here the test state is a full-length array for simplicity.
    EdgeMapSpec {
        src_value: Arc::new(|_s: &Vec<f64>, u| u as f64 + 1.0),
        edge_value: Arc::new(|_u, _v, w, val: &f64| Some(val * w)),
        combine: Arc::new(|a: f64, b: f64| a + b),
        write_back: Arc::new(|s: &mut Vec<f64>, v, agg: f64| {
            s[v as usize] += agg;
            true
        }),
        filter_dst: None,
        reversed: false,
        mode: Mode::Auto,
        alpha: 1.0,
    }
}

fn run_sum_round(
    gc: &mut GraphCluster,
    frontier: &DistVertexSubset,
    mode: Mode,
    reversed: bool,
) -> (Vec<f64>, DistVertexSubset, tdorch_core::graph::EdgeMapStats) {
    let p = gc.num_machines();
    let n = gc.meta.n;
    let mut states: Vec<Vec<f64>> = vec![vec![0.0; n]; p];
    let mut spec = sum_spec();
    spec.mode = mode;
    spec.reversed = reversed;
    let (next, stats) = dist_edge_map(gc, &mut states, frontier, &spec).unwrap();
    // Merge per-owner rows into one global view.
    let mut total = vec![0.0; n];
    for (m, s) in states.iter().enumerate() {
        for v in gc.meta.partition.range(m) {
            total[v as usize] = s[v as usize];
        }
    }
    (total, next, stats)
}

#[test]
fn empty_frontier_is_a_no_op() {
    let mut gc = ingest_pairs(&star_pairs(100), 101, 4, 2);
    let before = gc.cluster.counters().clone();
    let empty = DistVertexSubset::empty(4);
    let (vals, next, stats) = run_sum_round(&mut gc, &empty, Mode::Sparse, false);
    assert!(next.is_empty());
    assert_eq!(stats.f_applied, 0);
    assert!(vals.iter().all(|&x| x == 0.0));
    let delta = gc.cluster.counters().delta_since(&before);
    assert_eq!(delta.total_sent(), 0);
}

#[test]
fn sparse_dense_and_auto_agree() {
    let pairs = gen_ba(600, 4, 9);
    for p in [2usize, 4] {
        let frontier_sets: Vec<Vec<u32>> = vec![
            vec![0],
            vec![3, 77, 400],
            (0..600).collect(),
        ];
        for fr in frontier_sets {
            let mut results = Vec::new();
            for mode in [Mode::Sparse, Mode::Dense, Mode::Auto] {
                let mut gc = ingest_pairs(&pairs, 600, p, 9);
                let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, fr.clone());
                let (vals, next, _) = run_sum_round(&mut gc, &frontier, mode, false);
                let next_ids: Vec<u32> = next.iter().collect();
                results.push((vals, next_ids));
            }
            assert_eq!(results[0].1, results[1].1, "frontiers diverge (P={p})");
            assert_eq!(results[0].1, results[2].1);
            for v in 0..600 {
                assert!(
                    (results[0].0[v] - results[1].0[v]).abs() < 1e-9,
                    "value {v} sparse {} dense {}",
                    results[0].0[v],
                    results[1].0[v]
                );
            }
        }
    }
}

#[test]
fn reversed_mode_agrees_between_sparse_and_dense() {
    let pairs = gen_ba(300, 5, 13);
    let fr: Vec<u32> = vec![1, 50, 299];
    let mut results = Vec::new();
    for mode in [Mode::Sparse, Mode::Dense] {
        let mut gc = ingest_pairs(&pairs, 300, 4, 13);
        let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, fr.clone());
        let (vals, next, _) = run_sum_round(&mut gc, &frontier, mode, true);
        let next_ids: Vec<u32> = next.iter().collect();
        results.push((vals, next_ids));
    }
    assert_eq!(results[0].1, results[1].1);
    for v in 0..300 {
        assert!((results[0].0[v] - results[1].0[v]).abs() < 1e-9, "vertex {v}");
    }
}

#[test]
fn exactly_once_edge_application() {
    let pairs = gen_ba(500, 6, 21);
    let mut gc = ingest_pairs(&pairs, 500, 8, 21);
    let fr: Vec<u32> = (0..500).step_by(7).collect();
    let deg_sum: u64 = fr.iter().map(|&u| gc.meta.outdeg[u as usize] as u64).sum();
    let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, fr);
    let (_, _, stats) = run_sum_round(&mut gc, &frontier, Mode::Sparse, false);
    assert_eq!(stats.edge_visits, deg_sum);
    assert_eq!(stats.f_applied, deg_sum);
}

#[test]
fn filter_dst_skips_without_losing_accounting() {
    let pairs = gen_ba(200, 4, 23);
    let mut gc = ingest_pairs(&pairs, 200, 4, 23);
    let fr: Vec<u32> = (0..200).collect();
    let deg_sum: u64 = fr.iter().map(|&u| gc.meta.outdeg[u as usize] as u64).sum();
    let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, fr);
    let mut states: Vec<Vec<f64>> = vec![vec![0.0; 200]; 4];
    let mut spec = sum_spec();
    spec.mode = Mode::Sparse;
    spec.filter_dst = Some(Arc::new(|v| v % 2 == 0));
    let (next, stats) = dist_edge_map(&mut gc, &mut states, &frontier, &spec).unwrap();
    assert_eq!(stats.edge_visits, deg_sum);
    assert!(stats.f_applied < deg_sum);
    assert!(next.iter().all(|v| v % 2 == 0));
}

#[test]
fn dense_scan_work_tracks_local_edges() {
    let pairs = gen_ba(2000, 8, 31);
    let mut gc = ingest_pairs(&pairs, 2000, 8, 31);
    let per_edges: Vec<u64> = gc
        .cluster
        .machines()
        .iter()
        .map(|m| m.edges.len() as u64)
        .collect();
    let before = gc.cluster.counters().clone();
    let frontier = DistVertexSubset::all_vertices(&gc.meta.partition);
    let _ = run_sum_round(&mut gc, &frontier, Mode::Dense, false);
    let delta = gc.cluster.counters().delta_since(&before);
    // Scan work dominates comp in dense mode; it must track local edge
    // counts within 2x of the mean.
    let mean = delta.comp_work.iter().sum::<u64>() as f64 / 8.0;
    for (m, &w) in delta.comp_work.iter().enumerate() {
        assert!(
            (w as f64) < 2.0 * mean + 100.0,
            "machine {m} work {w} vs mean {mean} (edges {})",
            per_edges[m]
        );
    }
}

#[test]
fn all_local_active_vertex_moves_no_words() {
    // One machine: everything is local, zero cross-machine words.
    let mut gc = ingest_pairs(&[(0, 1), (0, 2), (1, 2)], 3, 1, 2);
    let before = gc.cluster.counters().clone();
    let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, [0u32]);
    let (vals, _, _) = run_sum_round(&mut gc, &frontier, Mode::Sparse, false);
    assert!(vals[1] > 0.0 && vals[2] > 0.0);
    let delta = gc.cluster.counters().delta_since(&before);
    assert_eq!(delta.total_sent(), 0);
}

#[test]
fn star_broadcast_is_tree_shaped_not_flat() {
    // The center's value reaches every edge-holding machine while each
    // hop fans out at most chunk-size ways.
    let pairs = star_pairs(2000);
    let mut gc = ingest_pairs(&pairs, 2001, 8, 77);
    let holders: Vec<usize> = gc
        .cluster
        .machines()
        .iter()
        .enumerate()
        .filter(|(_, m)| m.by_src.contains_key(&0))
        .map(|(i, _)| i)
        .collect();
    assert!(holders.len() >= 3, "star should spread");
    let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, [0u32]);
    let (vals, _, stats) = run_sum_round(&mut gc, &frontier, Mode::Sparse, false);
    assert_eq!(stats.f_applied, 2000);
    let touched = vals.iter().filter(|&&x| x > 0.0).count();
    assert_eq!(touched, 2000);
}

#[test]
fn dense_broadcast_is_destination_aware() {
    // Cycle graph: every vertex's out-edges rest at its own owner, so a
    // dense full-frontier round broadcasts almost nothing -- only the
    // partition-boundary write-backs cross machines. A broadcast to all
    // P machines would cost hundreds of words here.
    let pairs: Vec<(u32, u32)> = (0..64u32).map(|i| (i, (i + 1) % 64)).collect();
    let mut gc = ingest_pairs(&pairs, 64, 4, 6);
    let before = gc.cluster.counters().clone();
    let frontier = DistVertexSubset::all_vertices(&gc.meta.partition);
    let (_, _, stats) = run_sum_round(&mut gc, &frontier, Mode::Dense, false);
    assert_eq!(stats.f_applied, 2 * 64);
    let delta = gc.cluster.counters().delta_since(&before);
    assert!(
        delta.total_sent() < 64,
        "dense broadcast not destination-aware: {} words",
        delta.total_sent()
    );
}

#[test]
fn batched_envelopes_per_machine_pair() {
    // Two active vertices owned by one machine with edges on the same
    // remote machine: values ride one envelope (one message).
    let p = 2;
    // Vertices 0 and 1 both connect to vertex 9 and others so that owner
    // of {0,1} is machine 0 and all of their edges rest elsewhere only if
    // spilled; with low degree they rest at the owner, so instead check
    // message counts for the write-back direction: contributions from
    // machine 0 to owner(9) on machine 1 must batch.
    let edges = vec![
        Edge::new(0, 9, 1.0),
        Edge::new(1, 9, 1.0),
        Edge::new(0, 8, 1.0),
        Edge::new(1, 8, 1.0),
    ];
    let cfg = IngestConfig::new(p, 4);
    let mut gc = ingest(edges, 10, &cfg).unwrap();
    assert_eq!(gc.owner_of(0), 0);
    assert_eq!(gc.owner_of(9), 1);
    let before = gc.cluster.counters().clone();
    let frontier = DistVertexSubset::from_vertices(&gc.meta.partition, [0u32, 1]);
    let _ = run_sum_round(&mut gc, &frontier, Mode::Sparse, false);
    let delta = gc.cluster.counters().delta_since(&before);
    // Four contributions (two targets times two sources) crossed in one
    // envelope: far fewer words than four separate messages would cost.
    assert!(delta.total_sent() > 0);
    assert!(delta.total_sent() <= 12, "words {}", delta.total_sent());
}
