//! The distributed edge-map engine.
//!
//! A round broadcasts active vertices' values to the machines storing
//! their edges (down the frozen source trees in sparse mode, directly to
//! the known edge locations in dense mode), applies the edge function
//! locally, and reduces the per-destination partial values back to the
//! owners (up the frozen destination trees, or directly when the
//! destination has no tree). Owners apply the write-back once per
//! touched vertex and the vertices whose write-back returned true form
//! the next frontier.
//!
//! With `reversed` set, the roles of the two tree families swap: values
//! ride the destination trees toward in-edge holders and write-backs
//! climb the source trees.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::bsp::{Cluster, Message, StepCtx};
use crate::meta::Arena;
use crate::rng::SplitMix64;
use crate::wire::{Wire, WireError, WireResult};

use super::subset::DistVertexSubset;
use super::{Edge, GraphError, GraphMeta};

/// One node of a frozen per-vertex tree, stored at its hosting machine.
#[derive(Debug, Clone, Default)]
pub struct TreeRow {
    /// Hosting machines of child nodes, with the child node ids.
    pub children: Vec<(u16, u32)>,
    /// Parent host and node id; None at the root (the vertex owner).
    pub parent: Option<(u16, u32)>,
    /// Machines whose edge contributions enter at this node but are not
    /// tree hosts themselves (destination trees only); value broadcasts
    /// over the tree are also delivered to them.
    pub deliver: Vec<u16>,
    pub depth: u32,
}

/// Per-machine graph state after ingestion.
pub struct GraphMachine {
    /// Resting edges, fixed at ingestion.
    pub edges: Vec<Edge>,
    /// Edge indices grouped by source vertex.
    pub by_src: BTreeMap<u32, Vec<u32>>,
    /// Edge indices grouped by destination vertex.
    pub by_dst: BTreeMap<u32, Vec<u32>>,
    /// Frozen source-tree rows: (vertex, node id) -> row.
    pub src_rows: BTreeMap<(u32, u32), TreeRow>,
    /// Frozen destination-tree rows.
    pub dst_rows: BTreeMap<(u32, u32), TreeRow>,
    /// Where this machine's forward write-back partials enter the
    /// destination tree of each treed vertex it has edges toward.
    pub dst_entry: BTreeMap<u32, (u16, u32)>,
    /// At owners: machines storing out-edges / in-edges per vertex
    /// (destination-aware dense broadcast).
    pub out_locs: BTreeMap<u32, Vec<u16>>,
    pub in_locs: BTreeMap<u32, Vec<u16>>,
    pub arena: Arena,
    pub rng: SplitMix64,
}

impl GraphMachine {
    pub fn new(seed: u64, machine: usize) -> Self {
        Self {
            edges: Vec::new(),
            by_src: BTreeMap::new(),
            by_dst: BTreeMap::new(),
            src_rows: BTreeMap::new(),
            dst_rows: BTreeMap::new(),
            dst_entry: BTreeMap::new(),
            out_locs: BTreeMap::new(),
            in_locs: BTreeMap::new(),
            arena: Arena::new(),
            rng: SplitMix64::derive(seed, 0x6772_6170 ^ machine as u64),
        }
    }

    pub fn rebuild_indices(&mut self) {
        self.by_src.clear();
        self.by_dst.clear();
        for (i, e) in self.edges.iter().enumerate() {
            self.by_src.entry(e.src).or_default().push(i as u32);
            self.by_dst.entry(e.dst).or_default().push(i as u32);
        }
    }
}

impl crate::orchestrate::SpillHost for GraphMachine {
    fn arena_mut(&mut self) -> &mut Arena {
        &mut self.arena
    }
}

/// The ingested distributed graph: a cluster of machines plus shared
/// metadata.
pub struct GraphCluster {
    pub cluster: Cluster<GraphMachine>,
    pub meta: Arc<GraphMeta>,
}

impl GraphCluster {
    pub fn num_machines(&self) -> usize {
        self.cluster.num_machines()
    }

    pub fn owner_of(&self, v: u32) -> usize {
        self.meta.partition.owner_of(v)
    }
}

// ---------------------------------------------------------------------------
// Edge-map interface
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Auto,
    Sparse,
    Dense,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "auto" => Some(Mode::Auto),
            "sparse" => Some(Mode::Sparse),
            "dense" => Some(Mode::Dense),
            _ => None,
        }
    }
}

/// Value extracted at the owner of an active vertex.
pub type SrcValueFn<S, V> = Arc<dyn Fn(&S, u32) -> V>;
/// Per-edge map `(u, v, weight, value of u) -> contribution to v`.
pub type EdgeValueFn<V> = Arc<dyn Fn(u32, u32, f64, &V) -> Option<V>>;
pub use crate::orchestrate::CombineFn;
/// Applies the merged value at the target owner; true votes the vertex
/// into the next frontier.
pub type VertexWriteBackFn<S, V> = Arc<dyn Fn(&mut S, u32, V) -> bool>;

/// One edge-map round: `src_value` extracts the broadcast value at the
/// owner of an active vertex, `edge_value` maps one edge (None skips),
/// `combine` pre-merges per destination, `write_back` applies the merged
/// value at the destination owner and votes the vertex into the next
/// frontier.
pub struct EdgeMapSpec<S, V> {
    pub src_value: SrcValueFn<S, V>,
    pub edge_value: EdgeValueFn<V>,
    pub combine: CombineFn<V>,
    pub write_back: VertexWriteBackFn<S, V>,
    /// Optional structural filter: edges whose target fails it are
    /// skipped before `edge_value` runs.
    pub filter_dst: Option<Arc<dyn Fn(u32) -> bool>>,
    /// Walk edges from destination to source (write-backs then target
    /// the source side).
    pub reversed: bool,
    pub mode: Mode,
    /// Threshold multiplier for the sparse/dense decision.
    pub alpha: f64,
}

impl<S, V> EdgeMapSpec<S, V> {
    pub fn new(
        src_value: impl Fn(&S, u32) -> V + 'static,
        edge_value: impl Fn(u32, u32, f64, &V) -> Option<V> + 'static,
        combine: impl Fn(V, V) -> V + 'static,
        write_back: impl Fn(&mut S, u32, V) -> bool + 'static,
    ) -> Self {
        Self {
            src_value: Arc::new(src_value),
            edge_value: Arc::new(edge_value),
            combine: Arc::new(combine),
            write_back: Arc::new(write_back),
            filter_dst: None,
            reversed: false,
            mode: Mode::Auto,
            alpha: 1.0,
        }
    }
}

/// Probes from one edge-map round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeMapStats {
    pub mode: Mode,
    /// Edges of active vertices visited (before the filter).
    pub edge_visits: u64,
    /// `edge_value` invocations (after the filter).
    pub f_applied: u64,
    pub supersteps: u64,
}

/// Sparse iff the frontier's degree sum is strictly below
/// `alpha * P * |U|`; ties go dense.
pub fn choose_mode(meta: &GraphMeta, frontier: &DistVertexSubset, alpha: f64, reversed: bool) -> Mode {
    let p = meta.partition.num_machines() as f64;
    let deg_sum: u64 = frontier
        .iter()
        .map(|u| {
            if reversed {
                meta.indeg[u as usize] as u64
            } else {
                meta.outdeg[u as usize] as u64
            }
        })
        .sum();
    if (deg_sum as f64) < alpha * p * frontier.len() as f64 {
        Mode::Sparse
    } else {
        Mode::Dense
    }
}

// ---------------------------------------------------------------------------
// Wire packets
// ---------------------------------------------------------------------------

enum GPkt<V> {
    /// Value of `vertex` addressed to tree nodes on the receiving
    /// machine; the value also activates local edges.
    TreeVal { vertex: u32, nodes: Vec<u32>, value: V },
    /// Value of `vertex` for local edge application only.
    VertexVal { vertex: u32, value: V },
    /// Write-back partial climbing to node `node` of `vertex`'s tree.
    TreePart { vertex: u32, node: u32, value: V },
    /// Write-back partial sent straight to the vertex owner.
    DirectPart { vertex: u32, value: V },
}

impl<V: Wire> Wire for GPkt<V> {
    fn put(&self, out: &mut Vec<u8>) {
        match self {
            GPkt::TreeVal {
                vertex,
                nodes,
                value,
            } => {
                0u8.put(out);
                vertex.put(out);
                nodes.put(out);
                value.put(out);
            }
            GPkt::VertexVal { vertex, value } => {
                1u8.put(out);
                vertex.put(out);
                value.put(out);
            }
            GPkt::TreePart {
                vertex,
                node,
                value,
            } => {
                2u8.put(out);
                vertex.put(out);
                node.put(out);
                value.put(out);
            }
            GPkt::DirectPart { vertex, value } => {
                3u8.put(out);
                vertex.put(out);
                value.put(out);
            }
        }
    }

    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(match u8::take(buf)? {
            0 => GPkt::TreeVal {
                vertex: u32::take(buf)?,
                nodes: Vec::<u32>::take(buf)?,
                value: V::take(buf)?,
            },
            1 => GPkt::VertexVal {
                vertex: u32::take(buf)?,
                value: V::take(buf)?,
            },
            2 => GPkt::TreePart {
                vertex: u32::take(buf)?,
                node: u32::take(buf)?,
                value: V::take(buf)?,
            },
            3 => GPkt::DirectPart {
                vertex: u32::take(buf)?,
                value: V::take(buf)?,
            },
            tag => return Err(WireError::BadTag { tag, what: "gpkt" }),
        })
    }
}

struct GBag<V> {
    by_dst: BTreeMap<usize, Vec<GPkt<V>>>,
}

impl<V: Wire> GBag<V> {
    fn new() -> Self {
        Self {
            by_dst: BTreeMap::new(),
        }
    }
    fn push(&mut self, dst: usize, pkt: GPkt<V>) {
        self.by_dst.entry(dst).or_default().push(pkt);
    }
    fn flush(&mut self, ctx: &mut StepCtx) -> Result<(), String> {
        for (dst, pkts) in std::mem::take(&mut self.by_dst) {
            let bytes = pkts.to_bytes();
            ctx.add_overhead((bytes.len() as u64).div_ceil(8));
            ctx.send(dst, bytes).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

fn gdecode<V: Wire>(inbox: &[Message]) -> Result<Vec<(usize, GPkt<V>)>, String> {
    let mut out = Vec::new();
    for msg in inbox {
        for p in Vec::<GPkt<V>>::from_bytes(&msg.payload).map_err(|e| e.to_string())? {
            out.push((msg.src, p));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Round scratch
// ---------------------------------------------------------------------------

struct RoundScratch<V> {
    /// Values available for local edge application this round.
    values: BTreeMap<u32, V>,
    /// Per-(vertex, node) accumulated write-back partials.
    node_acc: BTreeMap<(u32, u32), V>,
    /// Direct partials received at the owner.
    owner_acc: BTreeMap<u32, V>,
    /// Next-frontier votes.
    votes: BTreeSet<u32>,
}

impl<V> Default for RoundScratch<V> {
    fn default() -> Self {
        Self {
            values: BTreeMap::new(),
            node_acc: BTreeMap::new(),
            owner_acc: BTreeMap::new(),
            votes: BTreeSet::new(),
        }
    }
}

fn fold_into<V>(
    slot: &mut BTreeMap<u32, V>,
    key: u32,
    value: V,
    combine: &CombineFn<V>,
    ctx: &mut StepCtx,
) {
    match slot.remove(&key) {
        None => {
            slot.insert(key, value);
        }
        Some(acc) => {
            ctx.add_work(1);
            slot.insert(key, combine(acc, value));
        }
    }
}

// ---------------------------------------------------------------------------
// dist_edge_map
// ---------------------------------------------------------------------------

/// Run one edge-map round over the frontier. `alg` holds one
/// algorithm-state value per machine, accessed only within that
/// machine's step.
pub fn dist_edge_map<S, V>(
    gc: &mut GraphCluster,
    alg: &mut [S],
    frontier: &DistVertexSubset,
    spec: &EdgeMapSpec<S, V>,
) -> Result<(DistVertexSubset, EdgeMapStats), GraphError>
where
    V: Wire + Clone + 'static,
{
    let p = gc.num_machines();
    assert_eq!(alg.len(), p);
    let meta = gc.meta.clone();
    let mode = match spec.mode {
        Mode::Auto => choose_mode(&meta, frontier, spec.alpha, spec.reversed),
        m => m,
    };

    let mut scratch: Vec<RoundScratch<V>> = (0..p).map(|_| RoundScratch::default()).collect();
    let mut stats = EdgeMapStats {
        mode,
        edge_visits: 0,
        f_applied: 0,
        supersteps: 0,
    };

    // Depth of the broadcast phase: deepest frozen tree among active
    // vertices (sparse mode only; dense broadcasts are direct).
    let bcast_rows: fn(&GraphMachine) -> &BTreeMap<(u32, u32), TreeRow> = if spec.reversed {
        |m| &m.dst_rows
    } else {
        |m| &m.src_rows
    };
    let reduce_rows: fn(&GraphMachine) -> &BTreeMap<(u32, u32), TreeRow> = if spec.reversed {
        |m| &m.src_rows
    } else {
        |m| &m.dst_rows
    };
    let bcast_depths = if spec.reversed {
        &meta.dst_depth
    } else {
        &meta.src_depth
    };
    let bcast_depth = if mode == Mode::Sparse {
        frontier
            .iter()
            .filter_map(|u| bcast_depths.get(&u).copied())
            .max()
            .unwrap_or(0)
    } else {
        0
    };
    // Reduce depth: conservative global maximum of the reduce-side trees.
    let reduce_depth = if spec.reversed {
        meta.src_depth.values().copied().max().unwrap_or(0)
    } else {
        meta.dst_depth.values().copied().max().unwrap_or(0)
    };

    // --- Broadcast phase ---------------------------------------------------
    // Step 0: owners emit values for their active vertices.
    {
        let scratch = &mut scratch;
        let alg = &mut *alg;
        gc.cluster
            .run_superstep(|machine, state, _inbox, ctx| {
                let mut bag: GBag<V> = GBag::new();
                let active = frontier.local(machine);
                for u in active.iter() {
                    let value = (spec.src_value)(&alg[machine], u);
                    scratch[machine].values.insert(u, value.clone());
                    let direct_locs = if spec.reversed {
                        state.in_locs.get(&u)
                    } else {
                        state.out_locs.get(&u)
                    };
                    if mode == Mode::Dense {
                        // Destination-aware broadcast: only to machines
                        // actually storing this vertex's edges.
                        if let Some(locs) = direct_locs {
                            for &h in locs {
                                if h as usize != machine {
                                    bag.push(
                                        h as usize,
                                        GPkt::VertexVal {
                                            vertex: u,
                                            value: value.clone(),
                                        },
                                    );
                                }
                            }
                        }
                    } else if let Some(row) = bcast_rows(state).get(&(u, 0)) {
                        // Down the frozen tree; the root row lives here.
                        send_down(&mut bag, u, row, &value);
                    } else if spec.reversed {
                        // No destination tree: in-edges are scattered, so
                        // deliver directly to their holders.
                        if let Some(locs) = direct_locs {
                            for &h in locs {
                                if h as usize != machine {
                                    bag.push(
                                        h as usize,
                                        GPkt::VertexVal {
                                            vertex: u,
                                            value: value.clone(),
                                        },
                                    );
                                }
                            }
                        }
                    }
                    // Forward mode without a tree: every out-edge already
                    // rests here at the owner; the local value suffices.
                }
                bag.flush(ctx)
            })
            .map_err(crate::orchestrate::OrchError::from)?;
        stats.supersteps += 1;
    }

    // Sparse forwarding: one superstep per tree level.
    for _ in 0..bcast_depth {
        let scratch = &mut scratch;
        gc.cluster
            .run_superstep(|machine, state, inbox, ctx| {
                let mut bag: GBag<V> = GBag::new();
                for (_src, pkt) in gdecode::<V>(inbox)? {
                    match pkt {
                        GPkt::TreeVal {
                            vertex,
                            nodes,
                            value,
                        } => {
                            scratch[machine].values.insert(vertex, value.clone());
                            for node in nodes {
                                let row = bcast_rows(state)
                                    .get(&(vertex, node))
                                    .ok_or_else(|| format!("missing tree row ({vertex},{node})"))?;
                                send_down(&mut bag, vertex, row, &value);
                            }
                        }
                        GPkt::VertexVal { vertex, value } => {
                            scratch[machine].values.insert(vertex, value);
                        }
                        _ => return Err("unexpected packet in broadcast".into()),
                    }
                }
                bag.flush(ctx)
            })
            .map_err(crate::orchestrate::OrchError::from)?;
        stats.supersteps += 1;
    }

    // --- Execute phase -----------------------------------------------------
    let mut edge_visits = 0u64;
    let mut f_applied = 0u64;
    {
        let scratch = &mut scratch;
        let edge_visits = &mut edge_visits;
        let f_applied = &mut f_applied;
        gc.cluster
            .run_superstep(|machine, state, inbox, ctx| {
                // Dense-mode values (and last-level deliveries) arrive here.
                for (_src, pkt) in gdecode::<V>(inbox)? {
                    match pkt {
                        GPkt::VertexVal { vertex, value }
                        | GPkt::TreeVal { vertex, value, .. } => {
                            scratch[machine].values.insert(vertex, value);
                        }
                        _ => return Err("unexpected packet in execute".into()),
                    }
                }
                let s = &mut scratch[machine];
                let mut bag: GBag<V> = GBag::new();
                let mut out_acc: BTreeMap<u32, V> = BTreeMap::new();
                let index = if spec.reversed {
                    &state.by_dst
                } else {
                    &state.by_src
                };
                let mut visits_here = 0u64;
                let apply_edges = |u: u32,
                                       uval: &V,
                                       edge_ids: &[u32],
                                       out_acc: &mut BTreeMap<u32, V>,
                                       ctx: &mut StepCtx|
                 -> u64 {
                    let mut applied = 0u64;
                    for &ei in edge_ids {
                        let e = state.edges[ei as usize];
                        let target = if spec.reversed { e.src } else { e.dst };
                        if let Some(filter) = &spec.filter_dst {
                            if !filter(target) {
                                continue;
                            }
                        }
                        applied += 1;
                        if let Some(v) = (spec.edge_value)(u, target, e.weight, uval) {
                            fold_into(out_acc, target, v, &spec.combine, ctx);
                        }
                    }
                    applied
                };
                match mode {
                    Mode::Dense => {
                        // Edge-centric: scan the whole local chunk; apply
                        // where the source is active. Scan work is charged
                        // per local edge.
                        let mut scanned = 0u64;
                        for (&u, edge_ids) in index {
                            scanned += edge_ids.len() as u64;
                            if let Some(uval) = s.values.get(&u) {
                                visits_here += edge_ids.len() as u64;
                                *f_applied += apply_edges(u, uval, edge_ids, &mut out_acc, ctx);
                            }
                        }
                        ctx.add_work(scanned);
                    }
                    Mode::Sparse | Mode::Auto => {
                        // Vertex-centric: only arrived active vertices.
                        for (&u, uval) in &s.values {
                            if let Some(edge_ids) = index.get(&u) {
                                visits_here += edge_ids.len() as u64;
                                *f_applied += apply_edges(u, uval, edge_ids, &mut out_acc, ctx);
                            }
                        }
                        ctx.add_work(visits_here);
                    }
                }
                *edge_visits += visits_here;

                // Route per-target partials: into the reduce tree when the
                // target has one, straight to the owner otherwise.
                for (target, value) in out_acc {
                    if spec.reversed {
                        // Contributors host their own source-tree nodes.
                        let entry = reduce_rows(state)
                            .range((target, 0)..(target, u32::MAX))
                            .next()
                            .map(|(&(_, node), _)| node);
                        match entry {
                            Some(node) => {
                                fold_into_keyed(
                                    &mut s.node_acc,
                                    (target, node),
                                    value,
                                    &spec.combine,
                                    ctx,
                                );
                            }
                            None => {
                                let dst = meta.partition.owner_of(target);
                                bag.push(dst, GPkt::DirectPart { vertex: target, value });
                            }
                        }
                    } else {
                        match state.dst_entry.get(&target) {
                            Some(&(host, node)) => bag.push(
                                host as usize,
                                GPkt::TreePart {
                                    vertex: target,
                                    node,
                                    value,
                                },
                            ),
                            None => {
                                let dst = meta.partition.owner_of(target);
                                bag.push(dst, GPkt::DirectPart { vertex: target, value });
                            }
                        }
                    }
                }
                bag.flush(ctx)
            })
            .map_err(crate::orchestrate::OrchError::from)?;
        stats.supersteps += 1;
    }
    stats.edge_visits = edge_visits;
    stats.f_applied = f_applied;

    // --- Reduce phase ------------------------------------------------------
    // Nodes at depth d forward their fold at step (depth_max - d + 1);
    // the root (owner) applies at the final step.
    for step in 1..=reduce_depth {
        let scratch = &mut scratch;
        gc.cluster
            .run_superstep(|machine, state, inbox, ctx| {
                let s = &mut scratch[machine];
                for (_src, pkt) in gdecode::<V>(inbox)? {
                    match pkt {
                        GPkt::TreePart {
                            vertex,
                            node,
                            value,
                        } => fold_into_keyed(
                            &mut s.node_acc,
                            (vertex, node),
                            value,
                            &spec.combine,
                            ctx,
                        ),
                        GPkt::DirectPart { vertex, value } => {
                            fold_into(&mut s.owner_acc, vertex, value, &spec.combine, ctx)
                        }
                        _ => return Err("unexpected packet in reduce".into()),
                    }
                }
                let mut bag: GBag<V> = GBag::new();
                let ready: Vec<(u32, u32)> = s
                    .node_acc
                    .keys()
                    .copied()
                    .filter(|&(vertex, node)| {
                        reduce_rows(state)
                            .get(&(vertex, node))
                            .is_some_and(|row| {
                                row.parent.is_some() && reduce_depth - row.depth + 1 == step
                            })
                    })
                    .collect();
                for key in ready {
                    let value = s.node_acc.remove(&key).unwrap();
                    let row = &reduce_rows(state)[&key];
                    let (host, pnode) = row.parent.unwrap();
                    bag.push(
                        host as usize,
                        GPkt::TreePart {
                            vertex: key.0,
                            node: pnode,
                            value,
                        },
                    );
                }
                bag.flush(ctx)
            })
            .map_err(crate::orchestrate::OrchError::from)?;
        stats.supersteps += 1;
    }

    // Final step: owners fold root accumulations with direct partials and
    // apply the write-back once per touched vertex.
    {
        let scratch = &mut scratch;
        let alg = &mut *alg;
        gc.cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                let s = &mut scratch[machine];
                for (_src, pkt) in gdecode::<V>(inbox)? {
                    match pkt {
                        GPkt::TreePart {
                            vertex,
                            node,
                            value,
                        } => fold_into_keyed(
                            &mut s.node_acc,
                            (vertex, node),
                            value,
                            &spec.combine,
                            ctx,
                        ),
                        GPkt::DirectPart { vertex, value } => {
                            fold_into(&mut s.owner_acc, vertex, value, &spec.combine, ctx)
                        }
                        _ => return Err("unexpected packet in final reduce".into()),
                    }
                }
                // Root accumulations (node 0) merge into the owner fold.
                let roots: Vec<(u32, u32)> =
                    s.node_acc.keys().copied().filter(|&(_, node)| node == 0).collect();
                for key in roots {
                    let value = s.node_acc.remove(&key).unwrap();
                    fold_into(&mut s.owner_acc, key.0, value, &spec.combine, ctx);
                }
                debug_assert!(
                    s.node_acc.is_empty(),
                    "unforwarded tree partials on {machine}: {:?}",
                    s.node_acc.keys().collect::<Vec<_>>()
                );
                let acc = std::mem::take(&mut s.owner_acc);
                for (vertex, value) in acc {
                    debug_assert_eq!(meta.partition.owner_of(vertex), machine);
                    ctx.add_work(1);
                    if (spec.write_back)(&mut alg[machine], vertex, value) {
                        s.votes.insert(vertex);
                    }
                }
                Ok(())
            })
            .map_err(crate::orchestrate::OrchError::from)?;
        stats.supersteps += 1;
    }

    let members: Vec<BTreeSet<u32>> = scratch.iter_mut().map(|s| std::mem::take(&mut s.votes)).collect();
    let next = DistVertexSubset::from_members(&meta.partition, members);
    Ok((next, stats))
}

/// Forward a value one level down a frozen tree: group child nodes per
/// host, and deliver to the non-host contributor machines listed on the
/// row. Local edges see the value without any message.
fn send_down<V: Wire + Clone>(bag: &mut GBag<V>, vertex: u32, row: &TreeRow, value: &V) {
    let mut per_host: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for &(host, node) in &row.children {
        per_host.entry(host).or_default().push(node);
    }
    for (host, nodes) in per_host {
        bag.push(
            host as usize,
            GPkt::TreeVal {
                vertex,
                nodes,
                value: value.clone(),
            },
        );
    }
    for &host in &row.deliver {
        bag.push(
            host as usize,
            GPkt::VertexVal {
                vertex,
                value: value.clone(),
            },
        );
    }
}

fn fold_into_keyed<V>(
    slot: &mut BTreeMap<(u32, u32), V>,
    key: (u32, u32),
    value: V,
    combine: &CombineFn<V>,
    ctx: &mut StepCtx,
) {
    match slot.remove(&key) {
        None => {
            slot.insert(key, value);
        }
        Some(acc) => {
            ctx.add_work(1);
            slot.insert(key, combine(acc, value));
        }
    }
}
