//! The five frontier algorithms, each a driver issuing edge-map rounds.

use std::sync::Arc;

use crate::wire::Wire;

use super::engine::{dist_edge_map, EdgeMapSpec, EdgeMapStats, GraphCluster, Mode};
use super::subset::DistVertexSubset;
use super::GraphError;

/// Accumulated probes across an algorithm run.
#[derive(Debug, Clone, Default)]
pub struct AlgoStats {
    pub rounds: u64,
    pub edge_visits: u64,
    pub f_applied: u64,
    pub sparse_rounds: u64,
    pub dense_rounds: u64,
}

impl AlgoStats {
    fn absorb(&mut self, s: &EdgeMapStats) {
        self.rounds += 1;
        self.edge_visits += s.edge_visits;
        self.f_applied += s.f_applied;
        match s.mode {
            Mode::Dense => self.dense_rounds += 1,
            _ => self.sparse_rounds += 1,
        }
    }
}

fn check_start(gc: &GraphCluster, start: u32) -> Result<(), GraphError> {
    if (start as usize) < gc.meta.n {
        Ok(())
    } else {
        Err(GraphError::BadStart {
            start,
            n: gc.meta.n,
        })
    }
}

/// Gather per-machine local arrays into one global vector.
fn gather<T: Clone>(gc: &GraphCluster, per_machine: &[Vec<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(gc.meta.n);
    for (m, local) in per_machine.iter().enumerate() {
        debug_assert_eq!(local.len(), gc.meta.partition.range(m).len());
        out.extend(local.iter().cloned());
    }
    out
}

fn local_init<T: Clone>(gc: &GraphCluster, value: T) -> Vec<Vec<T>> {
    (0..gc.num_machines())
        .map(|m| vec![value.clone(); gc.meta.partition.range(m).len()])
        .collect()
}

/// Write one owned vertex's cell.
fn poke<T>(gc: &GraphCluster, arrays: &mut [Vec<T>], v: u32, value: T) {
    let m = gc.owner_of(v);
    let lo = gc.meta.partition.range(m).start;
    arrays[m][(v - lo) as usize] = value;
}

struct LocalArray<T> {
    lo: u32,
    data: Vec<T>,
}

impl<T: Copy> LocalArray<T> {
    fn get(&self, v: u32) -> T {
        self.data[(v - self.lo) as usize]
    }
    fn set(&mut self, v: u32, value: T) {
        self.data[(v - self.lo) as usize] = value;
    }
}

fn to_local<T>(gc: &GraphCluster, arrays: Vec<Vec<T>>) -> Vec<LocalArray<T>> {
    arrays
        .into_iter()
        .enumerate()
        .map(|(m, data)| LocalArray {
            lo: gc.meta.partition.range(m).start,
            data,
        })
        .collect()
}

fn from_local<T>(states: Vec<LocalArray<T>>) -> Vec<Vec<T>> {
    states.into_iter().map(|s| s.data).collect()
}

// ---------------------------------------------------------------------------
// BFS
// ---------------------------------------------------------------------------

/// Hop distances from `start` (-1 unreachable): frontier rounds with MAX
/// merge; a vertex joins the next frontier when its distance was unset.
pub fn bfs(gc: &mut GraphCluster, start: u32, mode: Mode) -> Result<(Vec<i64>, AlgoStats), GraphError> {
    check_start(gc, start)?;
    let mut dist = local_init(gc, -1i64);
    poke(gc, &mut dist, start, 0);
    let mut states = to_local(gc, dist);
    let mut stats = AlgoStats::default();

    let mut frontier = DistVertexSubset::from_vertices(&gc.meta.partition, [start]);
    let mut round = 1i64;
    while !frontier.is_empty() {
        let spec: EdgeMapSpec<LocalArray<i64>, i64> = EdgeMapSpec {
            src_value: Arc::new(move |s: &LocalArray<i64>, u| {
                if s.get(u) == round - 1 {
                    round
                } else {
                    -1
                }
            }),
            edge_value: Arc::new(|_u, _v, _w, val: &i64| Some(*val)),
            combine: Arc::new(|a: i64, b: i64| a.max(b)),
            write_back: Arc::new(|s: &mut LocalArray<i64>, v, agg: i64| {
                if s.get(v) == -1 && agg != -1 {
                    s.set(v, agg);
                    true
                } else {
                    false
                }
            }),
            filter_dst: None,
            reversed: false,
            mode,
            alpha: 1.0,
        };
        let (next, s) = dist_edge_map(gc, &mut states, &frontier, &spec)?;
        stats.absorb(&s);
        frontier = next;
        round += 1;
    }
    Ok((gather(gc, &from_local(states)), stats))
}

// ---------------------------------------------------------------------------
// SSSP
// ---------------------------------------------------------------------------

/// Frontier-driven relaxation with MIN merge over non-negative weights.
pub fn sssp(gc: &mut GraphCluster, start: u32, mode: Mode) -> Result<(Vec<f64>, AlgoStats), GraphError> {
    check_start(gc, start)?;
    if gc.meta.min_weight < 0.0 {
        return Err(GraphError::NegativeWeight {
            weight: gc.meta.min_weight,
        });
    }
    let mut dist = local_init(gc, f64::INFINITY);
    poke(gc, &mut dist, start, 0.0);
    let mut states = to_local(gc, dist);
    let mut stats = AlgoStats::default();

    let mut frontier = DistVertexSubset::from_vertices(&gc.meta.partition, [start]);
    let round_cap = gc.meta.n as u64 + 2;
    while !frontier.is_empty() {
        assert!(stats.rounds <= round_cap, "relaxation failed to settle");
        let spec: EdgeMapSpec<LocalArray<f64>, f64> = EdgeMapSpec {
            src_value: Arc::new(|s: &LocalArray<f64>, u| s.get(u)),
            edge_value: Arc::new(|_u, _v, w, du: &f64| {
                if du.is_finite() {
                    Some(du + w)
                } else {
                    None
                }
            }),
            combine: Arc::new(|a: f64, b: f64| a.min(b)),
            write_back: Arc::new(|s: &mut LocalArray<f64>, v, agg: f64| {
                if agg < s.get(v) {
                    s.set(v, agg);
                    true
                } else {
                    false
                }
            }),
            filter_dst: None,
            reversed: false,
            mode,
            alpha: 1.0,
        };
        let (next, s) = dist_edge_map(gc, &mut states, &frontier, &spec)?;
        stats.absorb(&s);
        frontier = next;
    }
    Ok((gather(gc, &from_local(states)), stats))
}

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

/// Min-label propagation until no label changes; expects both edge
/// directions to be present for undirected semantics.
pub fn cc(gc: &mut GraphCluster, mode: Mode) -> Result<(Vec<u32>, AlgoStats), GraphError> {
    let mut labels: Vec<Vec<u32>> = (0..gc.num_machines())
        .map(|m| gc.meta.partition.range(m).collect())
        .collect();
    let mut states = to_local(
        gc,
        std::mem::take(&mut labels),
    );
    let mut stats = AlgoStats::default();

    let mut frontier = DistVertexSubset::all_vertices(&gc.meta.partition);
    while !frontier.is_empty() {
        let spec: EdgeMapSpec<LocalArray<u32>, u32> = EdgeMapSpec {
            src_value: Arc::new(|s: &LocalArray<u32>, u| s.get(u)),
            edge_value: Arc::new(|_u, _v, _w, label: &u32| Some(*label)),
            combine: Arc::new(|a: u32, b: u32| a.min(b)),
            write_back: Arc::new(|s: &mut LocalArray<u32>, v, agg: u32| {
                if agg < s.get(v) {
                    s.set(v, agg);
                    true
                } else {
                    false
                }
            }),
            filter_dst: None,
            reversed: false,
            mode,
            alpha: 1.0,
        };
        let (next, s) = dist_edge_map(gc, &mut states, &frontier, &spec)?;
        stats.absorb(&s);
        frontier = next;
    }
    Ok((gather(gc, &from_local(states)), stats))
}

// ---------------------------------------------------------------------------
// PageRank
// ---------------------------------------------------------------------------

struct PrState {
    score: LocalArray<f64>,
    contrib: LocalArray<f64>,
}

/// Fixed-iteration PageRank with uniform dangling redistribution.
pub fn pr(
    gc: &mut GraphCluster,
    iters: u32,
    damping: f64,
    mode: Mode,
) -> Result<(Vec<f64>, AlgoStats), GraphError> {
    assert!(iters >= 1, "need at least one iteration");
    assert!((0.0..1.0).contains(&damping) && damping > 0.0, "damping in (0,1)");
    let n = gc.meta.n;
    let meta = gc.meta.clone();
    let mut states: Vec<PrState> = to_local(gc, local_init(gc, 1.0 / n as f64))
        .into_iter()
        .zip(to_local(gc, local_init(gc, 0.0f64)))
        .map(|(score, contrib)| PrState { score, contrib })
        .collect();
    let mut stats = AlgoStats::default();
    let everyone = DistVertexSubset::all_vertices(&gc.meta.partition);

    for _ in 0..iters {
        // In-band scalar reduce of the dangling mass: every machine sends
        // its local sum to machine 0, which broadcasts the total.
        let dangling = scalar_all_reduce(gc, &mut states, |state, lo, len| {
            (0..len)
                .filter(|&i| meta.outdeg[lo as usize + i] == 0)
                .map(|i| state.score.data[i])
                .sum()
        })?;
        stats.rounds += 2; // the two reduce supersteps ride along

        let meta2 = meta.clone();
        let spec: EdgeMapSpec<PrState, f64> = EdgeMapSpec {
            src_value: Arc::new(move |s: &PrState, u| {
                let d = meta2.outdeg[u as usize];
                if d == 0 {
                    0.0
                } else {
                    s.score.get(u) / d as f64
                }
            }),
            edge_value: Arc::new(|_u, _v, _w, val: &f64| Some(*val)),
            combine: Arc::new(|a: f64, b: f64| a + b),
            write_back: Arc::new(|s: &mut PrState, v, agg: f64| {
                s.contrib.set(v, agg);
                false
            }),
            filter_dst: None,
            reversed: false,
            mode,
            alpha: 1.0,
        };
        let (_empty, s) = dist_edge_map(gc, &mut states, &everyone, &spec)?;
        stats.absorb(&s);

        // Local finalize: every owned vertex gets base + damped mass.
        let base = (1.0 - damping) / n as f64;
        let share = dangling / n as f64;
        gc.cluster
            .run_superstep(|machine, _state, _inbox, ctx| {
                let st = &mut states[machine];
                ctx.add_work(st.score.data.len() as u64);
                for i in 0..st.score.data.len() {
                    st.score.data[i] = base + damping * (st.contrib.data[i] + share);
                    st.contrib.data[i] = 0.0;
                }
                Ok(())
            })
            .map_err(crate::orchestrate::OrchError::from)?;
    }

    let arrays: Vec<Vec<f64>> = states.into_iter().map(|s| s.score.data).collect();
    Ok((gather(gc, &arrays), stats))
}

/// Two-superstep sum-then-broadcast of one scalar per machine.
fn scalar_all_reduce<S>(
    gc: &mut GraphCluster,
    states: &mut [S],
    local: impl Fn(&S, u32, usize) -> f64,
) -> Result<f64, GraphError> {
    let p = gc.num_machines();
    let meta = gc.meta.clone();
    gc.cluster
        .run_superstep(|machine, _state, _inbox, ctx| {
            let r = meta.partition.range(machine);
            let sum = local(&states[machine], r.start, r.len());
            ctx.send(0, sum.to_bytes()).map_err(|e| e.to_string())?;
            ctx.add_overhead(1);
            Ok(())
        })
        .map_err(crate::orchestrate::OrchError::from)?;
    let mut total_holder = vec![0.0f64; p];
    {
        let total_holder = &mut total_holder;
        gc.cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                if machine == 0 {
                    let mut total = 0.0;
                    for msg in inbox {
                        total += f64::from_bytes(&msg.payload).map_err(|e| e.to_string())?;
                    }
                    for dst in 0..p {
                        ctx.send(dst, total.to_bytes()).map_err(|e| e.to_string())?;
                        ctx.add_overhead(1);
                    }
                }
                Ok(())
            })
            .map_err(crate::orchestrate::OrchError::from)?;
        gc.cluster
            .run_superstep(|machine, _state, inbox, _ctx| {
                for msg in inbox {
                    total_holder[machine] = f64::from_bytes(&msg.payload).map_err(|e| e.to_string())?;
                }
                Ok(())
            })
            .map_err(crate::orchestrate::OrchError::from)?;
    }
    Ok(total_holder[0])
}

// ---------------------------------------------------------------------------
// Betweenness centrality
// ---------------------------------------------------------------------------

struct BcState {
    num_paths: LocalArray<f64>,
    bc: LocalArray<f64>,
    rounds: LocalArray<i64>,
}

/// Single-root betweenness: a forward counting sweep recording per-round
/// frontiers, an inversion pass, and a reverse sweep over reversed edges
/// replaying the frontiers backward.
pub fn bc(gc: &mut GraphCluster, start: u32, mode: Mode) -> Result<(Vec<f64>, AlgoStats), GraphError> {
    check_start(gc, start)?;
    let mut states: Vec<BcState> = {
        let np = to_local(gc, local_init(gc, 0.0f64));
        let bcv = to_local(gc, local_init(gc, 0.0f64));
        let rv = to_local(gc, local_init(gc, 0i64));
        np.into_iter()
            .zip(bcv)
            .zip(rv)
            .map(|((num_paths, bc), rounds)| BcState {
                num_paths,
                bc,
                rounds,
            })
            .collect()
    };
    {
        let m = gc.owner_of(start);
        states[m].num_paths.set(start, 1.0);
        states[m].rounds.set(start, 1);
    }
    let mut stats = AlgoStats::default();

    // Forward pass.
    let mut frontiers: Vec<DistVertexSubset> =
        vec![DistVertexSubset::from_vertices(&gc.meta.partition, [start])];
    let mut round = 1i64;
    loop {
        round += 1;
        let r = round;
        let spec: EdgeMapSpec<BcState, f64> = EdgeMapSpec {
            src_value: Arc::new(|s: &BcState, u| s.num_paths.get(u)),
            edge_value: Arc::new(|_u, _v, _w, paths: &f64| Some(*paths)),
            combine: Arc::new(|a: f64, b: f64| a + b),
            write_back: Arc::new(move |s: &mut BcState, v, agg: f64| {
                let seen = s.rounds.get(v);
                if seen == 0 || seen == r {
                    s.num_paths.set(v, s.num_paths.get(v) + agg);
                    if seen == 0 {
                        s.rounds.set(v, r);
                        return true;
                    }
                }
                false
            }),
            filter_dst: None,
            reversed: false,
            mode,
            alpha: 1.0,
        };
        let frontier = frontiers.last().unwrap().clone();
        let (next, s) = dist_edge_map(gc, &mut states, &frontier, &spec)?;
        stats.absorb(&s);
        if next.is_empty() {
            break;
        }
        frontiers.push(next);
    }

    // Inversion between the passes.
    gc.cluster
        .run_superstep(|machine, _state, _inbox, ctx| {
            let st = &mut states[machine];
            ctx.add_work(st.bc.data.len() as u64);
            for i in 0..st.bc.data.len() {
                if st.rounds.data[i] > 0 {
                    let inv = 1.0 / st.num_paths.data[i];
                    st.bc.data[i] = inv;
                    st.num_paths.data[i] = inv;
                }
            }
            Ok(())
        })
        .map_err(crate::orchestrate::OrchError::from)?;

    // Backward pass over reversed edges, replaying frontiers deepest
    // first; contributions land on the previous round's vertices.
    for r in (2..=frontiers.len() as i64).rev() {
        let frontier = frontiers[(r - 1) as usize].clone();
        let spec: EdgeMapSpec<BcState, f64> = EdgeMapSpec {
            src_value: Arc::new(|s: &BcState, u| s.bc.get(u)),
            edge_value: Arc::new(|_u, _v, _w, val: &f64| Some(*val)),
            combine: Arc::new(|a: f64, b: f64| a + b),
            write_back: Arc::new(move |s: &mut BcState, v, agg: f64| {
                if s.rounds.get(v) == r - 1 {
                    s.bc.set(v, s.bc.get(v) + agg);
                }
                false
            }),
            filter_dst: None,
            reversed: true,
            mode,
            alpha: 1.0,
        };
        let (_empty, s) = dist_edge_map(gc, &mut states, &frontier, &spec)?;
        stats.absorb(&s);
    }

    // Final transform; the root and unreached vertices score zero.
    gc.cluster
        .run_superstep(|machine, _state, _inbox, ctx| {
            let st = &mut states[machine];
            let lo = st.bc.lo;
            ctx.add_work(st.bc.data.len() as u64);
            for i in 0..st.bc.data.len() {
                let v = lo + i as u32;
                st.bc.data[i] = if v == start || st.rounds.data[i] == 0 {
                    0.0
                } else {
                    st.bc.data[i] / st.num_paths.data[i] - 1.0
                };
            }
            Ok(())
        })
        .map_err(crate::orchestrate::OrchError::from)?;

    let arrays: Vec<Vec<f64>> = states.into_iter().map(|s| s.bc.data).collect();
    Ok((gather(gc, &arrays), stats))
}
