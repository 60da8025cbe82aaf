//! Single-machine reference implementations used to verify the
//! distributed algorithms. Deliberately independent of the engine: plain
//! adjacency lists, textbook algorithms.

use std::collections::{BinaryHeap, VecDeque};

use super::Edge;

fn adjacency(n: usize, edges: &[Edge]) -> Vec<Vec<(u32, f64)>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.src as usize].push((e.dst, e.weight));
    }
    adj
}

/// Hop distances from `start`; -1 when unreachable.
pub fn bfs(n: usize, edges: &[Edge], start: u32) -> Vec<i64> {
    let adj = adjacency(n, edges);
    let mut dist = vec![-1i64; n];
    dist[start as usize] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u as usize] {
            if dist[v as usize] == -1 {
                dist[v as usize] = dist[u as usize] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Non-negative shortest-path distances; infinity when unreachable.
pub fn dijkstra(n: usize, edges: &[Edge], start: u32) -> Vec<f64> {
    let adj = adjacency(n, edges);
    let mut dist = vec![f64::INFINITY; n];
    dist[start as usize] = 0.0;
    // Max-heap on reversed ordering.
    let mut heap: BinaryHeap<(std::cmp::Reverse<u64>, u32)> = BinaryHeap::new();
    heap.push((std::cmp::Reverse(0), start));
    while let Some((std::cmp::Reverse(bits), u)) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[u as usize] {
            continue;
        }
        for &(v, w) in &adj[u as usize] {
            let nd = d + w;
            if nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push((std::cmp::Reverse(nd.to_bits()), v));
            }
        }
    }
    dist
}

/// Connected-component labels: each vertex mapped to the smallest vertex
/// id in its component (union-find over the given directed edges).
pub fn connected_components(n: usize, edges: &[Edge]) -> Vec<u32> {
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        let mut cur = x;
        while parent[cur as usize] != root {
            let next = parent[cur as usize];
            parent[cur as usize] = root;
            cur = next;
        }
        root
    }
    for e in edges {
        let a = find(&mut parent, e.src);
        let b = find(&mut parent, e.dst);
        if a != b {
            // Union by smaller id so labels come out canonical.
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent[hi as usize] = lo;
        }
    }
    (0..n as u32).map(|v| find(&mut parent, v)).collect()
}

/// Power iteration with uniform dangling redistribution; contributions
/// per destination accumulate in ascending source order.
pub fn pagerank(n: usize, edges: &[Edge], iters: u32, damping: f64) -> Vec<f64> {
    let mut outdeg = vec![0u32; n];
    for e in edges {
        outdeg[e.src as usize] += 1;
    }
    // Sorted by (src, dst) so the accumulation order is canonical.
    let mut sorted: Vec<&Edge> = edges.iter().collect();
    sorted.sort_by_key(|e| (e.src, e.dst));
    let mut score = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let dangling: f64 = (0..n)
            .filter(|&v| outdeg[v] == 0)
            .map(|v| score[v])
            .sum();
        let mut contrib = vec![0.0f64; n];
        for e in &sorted {
            contrib[e.dst as usize] += score[e.src as usize] / outdeg[e.src as usize] as f64;
        }
        let base = (1.0 - damping) / n as f64;
        let share = dangling / n as f64;
        score = (0..n).map(|v| base + damping * (contrib[v] + share)).collect();
    }
    score
}

/// Single-source betweenness accumulation: forward BFS counting shortest
/// paths per round, an inversion pass, and a reverse sweep over the
/// recorded frontiers; the start vertex and unreached vertices score 0.
pub fn betweenness(n: usize, edges: &[Edge], start: u32) -> Vec<f64> {
    let adj = adjacency(n, edges);
    let mut radj = vec![Vec::new(); n];
    for e in edges {
        radj[e.dst as usize].push(e.src);
    }

    let mut num_paths = vec![0.0f64; n];
    let mut rounds = vec![0i64; n];
    let mut bc = vec![0.0f64; n];
    num_paths[start as usize] = 1.0;
    rounds[start as usize] = 1;
    let mut frontiers: Vec<Vec<u32>> = vec![vec![start]];
    let mut round = 1i64;
    loop {
        round += 1;
        let prev = frontiers.last().unwrap().clone();
        // Aggregate path counts per destination in ascending source order.
        let mut agg: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
        for &u in &prev {
            for &(v, _) in &adj[u as usize] {
                if rounds[v as usize] == 0 || rounds[v as usize] == round {
                    *agg.entry(v).or_insert(0.0) += num_paths[u as usize];
                }
            }
        }
        let mut next = Vec::new();
        for (v, paths) in agg {
            num_paths[v as usize] += paths;
            if rounds[v as usize] == 0 {
                rounds[v as usize] = round;
                next.push(v);
            }
        }
        if next.is_empty() {
            break;
        }
        frontiers.push(next);
    }

    for v in 0..n {
        if rounds[v] > 0 {
            bc[v] = 1.0 / num_paths[v];
            num_paths[v] = bc[v];
        }
    }

    for r in (2..=frontiers.len() as i64).rev() {
        let frontier = &frontiers[(r - 1) as usize];
        let mut agg: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
        for &w in frontier {
            for &v in &radj[w as usize] {
                if rounds[v as usize] == r - 1 {
                    *agg.entry(v).or_insert(0.0) += bc[w as usize];
                }
            }
        }
        for (v, delta) in agg {
            bc[v as usize] += delta;
        }
    }

    (0..n)
        .map(|v| {
            if v as u32 == start || rounds[v] == 0 {
                0.0
            } else {
                bc[v] / num_paths[v] - 1.0
            }
        })
        .collect()
}
