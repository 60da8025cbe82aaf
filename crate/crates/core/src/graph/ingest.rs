//! Two-stage graph ingestion.
//!
//! Stage 1 places every edge on a random machine, runs one
//! contention-detection round keyed by the source vertex, and fixes edge
//! storage wherever the round left the wrapped edges: low-out-degree
//! sources end up fully co-located at their owner, high-out-degree
//! sources leave spilled chunks across machines. The merged sets are
//! frozen into per-vertex source trees.
//!
//! Stage 2 repeats the round keyed by destination (tasks originate at
//! the now-fixed edge locations, edges do not move) and freezes the
//! resulting destination trees, which later carry write-back reductions
//! and reversed-mode broadcasts.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::bsp::{Cluster, ClusterConfig};
use crate::forest::default_fanout;
use crate::meta::{expand_children, MetaContent, MetaTask, MetaTaskSet};
use crate::orchestrate::{run_contention_detection, OwnerFn, StageOptions, Substage1Input};
use crate::task::TaskContext;
use crate::wire::Wire;

use super::engine::{GraphCluster, GraphMachine, TreeRow};
use super::{Edge, GraphError, GraphMeta, VertexPartition};

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub num_machines: usize,
    pub chunk_size: u32,
    pub fanout: Option<usize>,
    pub seed: u64,
}

impl IngestConfig {
    pub fn new(num_machines: usize, seed: u64) -> Self {
        Self {
            num_machines,
            chunk_size: 8,
            fanout: None,
            seed,
        }
    }
}

/// Per-machine plan produced by walking one stage's frozen sets.
#[derive(Default)]
struct FreezePlan {
    rows: Vec<((u32, u32), TreeRow)>,
    edges: Vec<Edge>,
    entries: Vec<(u32, (u16, u32))>,
}

/// Ingest `edges` over `n` vertices into a simulated cluster.
pub fn ingest(edges: Vec<Edge>, n: usize, cfg: &IngestConfig) -> Result<GraphCluster, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let p = cfg.num_machines;
    for e in &edges {
        for id in [e.src, e.dst] {
            if id as usize >= n {
                return Err(GraphError::VertexOutOfRange { id, n });
            }
        }
    }
    let m = edges.len() as u64;
    let mut outdeg = vec![0u32; n];
    let mut indeg = vec![0u32; n];
    let mut min_weight = f64::INFINITY;
    for e in &edges {
        outdeg[e.src as usize] += 1;
        indeg[e.dst as usize] += 1;
        min_weight = min_weight.min(e.weight);
    }
    if edges.is_empty() {
        min_weight = 1.0;
    }
    let partition = VertexPartition::degree_balanced(&outdeg, p);

    let seed = cfg.seed;
    let mut cluster = Cluster::new(ClusterConfig::new(p, seed), move |machine| {
        GraphMachine::new(seed, machine)
    });

    let part = partition.clone();
    let owner: OwnerFn = Arc::new(move |addr| {
        if (addr as usize) < part.n() {
            Some(part.owner_of(addr as u32))
        } else {
            None
        }
    });

    // Random initial placement; the placement machine is the stage-1
    // task origin.
    let mut rng = crate::rng::SplitMix64::derive(seed, 0x70_6c61_6300);
    let mut stage1_tasks: Vec<Vec<TaskContext>> = (0..p).map(|_| Vec::new()).collect();
    for e in &edges {
        let machine = rng.next_below(p as u64) as usize;
        let idx = stage1_tasks[machine].len() as u32;
        let mut payload = Vec::with_capacity(12);
        e.dst.put(&mut payload);
        e.weight.put(&mut payload);
        stage1_tasks[machine].push(
            TaskContext::new(vec![e.src as u64], payload, machine as u32, idx)
                .expect("single address"),
        );
    }

    // --- Stage 1: colocate by source, freeze source trees ------------------
    let fanout = cfg.fanout.unwrap_or_else(|| default_fanout(m.max(1), p));
    let (round1, _) = run_contention_detection(
        &mut cluster,
        &owner,
        Substage1Input {
            tasks: stage1_tasks,
            chunk_size: cfg.chunk_size,
            fanout: Some(fanout),
        },
        &StageOptions::default(),
    )?;
    let mut sets1 = round1.final_sets;
    finalize_spill(&mut cluster, &mut sets1, cfg.chunk_size)?;

    let decode_edge = |vertex: u32, t: &TaskContext| -> Edge {
        let mut buf = t.payload.as_slice();
        let dst = u32::take(&mut buf).expect("edge payload");
        let weight = f64::take(&mut buf).expect("edge payload");
        Edge::new(vertex, dst, weight)
    };
    let (plans1, src_depth, out_locs) = walk_frozen_sets(&cluster, &sets1, p, |plan, vertex, t| {
        plan.edges.push(decode_edge(vertex, t));
    });
    install(&mut cluster, plans1, out_locs, true)?;

    // --- Stage 2: destination trees over the fixed edge placement ----------
    let mut stage2_tasks: Vec<Vec<TaskContext>> = (0..p).map(|_| Vec::new()).collect();
    for (machine, tasks) in stage2_tasks.iter_mut().enumerate() {
        for e in &cluster.machine(machine).edges {
            let idx = tasks.len() as u32;
            tasks.push(
                TaskContext::new(vec![e.dst as u64], Vec::new(), machine as u32, idx)
                    .expect("single address"),
            );
        }
    }
    let (round2, _) = run_contention_detection(
        &mut cluster,
        &owner,
        Substage1Input {
            tasks: stage2_tasks,
            chunk_size: cfg.chunk_size,
            fanout: Some(fanout),
        },
        &StageOptions::default(),
    )?;
    let mut sets2 = round2.final_sets;
    finalize_spill(&mut cluster, &mut sets2, cfg.chunk_size)?;

    let (plans2, dst_depth, in_locs) = walk_frozen_sets(&cluster, &sets2, p, |_plan, _v, _t| {});
    install(&mut cluster, plans2, in_locs, false)?;

    // Frozen structures replace the stage arenas.
    let clear: Vec<()> = Vec::new();
    drop(clear);
    cluster
        .run_superstep(|machine, state, _inbox, _ctx| {
            state.arena.clear();
            state.rebuild_indices();
            let _ = machine;
            Ok(())
        })
        .map_err(crate::orchestrate::OrchError::from)?;

    let meta = GraphMeta {
        n,
        m,
        partition,
        outdeg,
        indeg,
        min_weight,
        src_depth,
        dst_depth,
        chunk_size: cfg.chunk_size,
    };
    Ok(GraphCluster {
        cluster,
        meta: Arc::new(meta),
    })
}

/// Vertices at or above the contention threshold must end with a tree:
/// spill any remaining inline level-0 entries into an owner-local slot.
fn finalize_spill(
    cluster: &mut Cluster<GraphMachine>,
    sets: &mut [BTreeMap<u64, MetaTaskSet>],
    chunk_size: u32,
) -> Result<(), GraphError> {
    cluster
        .run_superstep(|machine, state, _inbox, ctx| {
            for set in sets[machine].values_mut() {
                if set.l0_total() >= chunk_size as u64 && !set.has_refs() {
                    let stats = set.spill_inline_l0(machine as u32, &mut state.arena);
                    ctx.add_overhead(stats.spilled_entries);
                }
            }
            Ok(())
        })
        .map_err(crate::orchestrate::OrchError::from)?;
    Ok(())
}

/// Per owner machine: (vertex, resting machines, contributor machines).
type LocationLists = Vec<Vec<(u32, Vec<u16>, Vec<u16>)>>;

/// Per-machine plans, per-vertex tree depths, and location lists.
type FrozenStage = (Vec<FreezePlan>, BTreeMap<u32, u32>, LocationLists);

/// A slot awaiting its walk: node id, hosting machine, arena handle,
/// depth, and the parent coordinate it reports to.
struct PendingSlot {
    node: u32,
    host: u32,
    handle: u64,
    depth: u32,
    parent: (u16, u32),
}

/// Walk every owner's frozen set, assigning BFS node ids and building
/// per-machine row/entry plans. `on_l0` receives each wrapped task at
/// the machine where it rests (used by stage 1 to place edges).
fn walk_frozen_sets(
    cluster: &Cluster<GraphMachine>,
    sets: &[BTreeMap<u64, MetaTaskSet>],
    p: usize,
    mut on_l0: impl FnMut(&mut FreezePlan, u32, &TaskContext),
) -> FrozenStage {
    let mut plans: Vec<FreezePlan> = (0..p).map(|_| FreezePlan::default()).collect();
    let mut depths: BTreeMap<u32, u32> = BTreeMap::new();
    let mut locs: LocationLists = (0..p).map(|_| Vec::new()).collect();

    for (owner_machine, finals) in sets.iter().enumerate() {
        for (&addr, set) in finals {
            let vertex = addr as u32;
            // Machines where wrapped tasks rest (edge holders after
            // stage 1) and machines the tasks came from (edge holders
            // during stage 2).
            let mut rest_set: BTreeSet<u16> = BTreeSet::new();
            let mut origin_set: BTreeSet<u16> = BTreeSet::new();
            // First machine occurrence claims the entry node; later
            // occurrences of the same contributor are redundant.
            let mut assigned: BTreeSet<u16> = BTreeSet::new();

            let mut root_row = TreeRow {
                children: Vec::new(),
                parent: None,
                deliver: Vec::new(),
                depth: 0,
            };
            let mut queue: Vec<PendingSlot> = Vec::new();
            let mut next_node = 1u32;

            // Root node 0 at the owner: inline level-0 tasks rest here.
            for entry in set.entries() {
                match &entry.content {
                    MetaContent::Task(t) => {
                        on_l0(&mut plans[owner_machine], vertex, t);
                        rest_set.insert(owner_machine as u16);
                        origin_set.insert(t.origin as u16);
                        if assigned.insert(t.origin as u16) {
                            plans[t.origin as usize]
                                .entries
                                .push((vertex, (owner_machine as u16, 0)));
                            if t.origin as usize != owner_machine {
                                root_row.deliver.push(t.origin as u16);
                            }
                        }
                    }
                    MetaContent::Slot {
                        machine, handle, ..
                    } => {
                        let node = next_node;
                        next_node += 1;
                        root_row.children.push((*machine as u16, node));
                        queue.push(PendingSlot {
                            node,
                            host: *machine,
                            handle: *handle,
                            depth: 1,
                            parent: (owner_machine as u16, 0),
                        });
                    }
                }
            }

            let mut max_depth = 0u32;
            let mut qi = 0usize;
            while qi < queue.len() {
                let PendingSlot {
                    node,
                    host,
                    handle,
                    depth,
                    parent,
                } = queue[qi];
                qi += 1;
                max_depth = max_depth.max(depth);
                let host_machine = host as usize;
                let slot: Vec<MetaTask> = {
                    let probe = MetaTask {
                        level: 1,
                        content: MetaContent::Slot {
                            machine: host,
                            handle,
                            child_count: 0,
                        },
                    };
                    expand_children(&probe, &cluster.machine(host_machine).arena)
                        .expect("frozen slot")
                        .to_vec()
                };
                let mut row = TreeRow {
                    children: Vec::new(),
                    parent: Some(parent),
                    deliver: Vec::new(),
                    depth,
                };
                for child in &slot {
                    match &child.content {
                        MetaContent::Task(t) => {
                            on_l0(&mut plans[host_machine], vertex, t);
                            rest_set.insert(host as u16);
                            origin_set.insert(t.origin as u16);
                            if assigned.insert(t.origin as u16) {
                                plans[t.origin as usize]
                                    .entries
                                    .push((vertex, (host as u16, node)));
                                if t.origin != host {
                                    row.deliver.push(t.origin as u16);
                                }
                            }
                        }
                        MetaContent::Slot {
                            machine: cm,
                            handle: ch,
                            ..
                        } => {
                            let cnode = next_node;
                            next_node += 1;
                            row.children.push((*cm as u16, cnode));
                            queue.push(PendingSlot {
                                node: cnode,
                                host: *cm,
                                handle: *ch,
                                depth: depth + 1,
                                parent: (host as u16, node),
                            });
                        }
                    }
                }
                plans[host_machine].rows.push(((vertex, node), row));
            }

            if next_node > 1 {
                depths.insert(vertex, max_depth);
                plans[owner_machine].rows.push(((vertex, 0), root_row));
            }
            // Treeless vertices broadcast through the location lists, so
            // the root row is stored only when a tree exists.

            locs[owner_machine].push((
                vertex,
                rest_set.into_iter().collect(),
                origin_set.into_iter().collect(),
            ));
        }
    }
    (plans, depths, locs)
}

fn install(
    cluster: &mut Cluster<GraphMachine>,
    mut plans: Vec<FreezePlan>,
    mut locs: LocationLists,
    stage_one: bool,
) -> Result<(), GraphError> {
    cluster
        .run_superstep(|machine, state, _inbox, ctx| {
            let plan = std::mem::take(&mut plans[machine]);
            let mut words = 0u64;
            for ((vertex, node), row) in plan.rows {
                words += 4 + row.children.len() as u64 + row.deliver.len() as u64;
                if stage_one {
                    state.src_rows.insert((vertex, node), row);
                } else {
                    state.dst_rows.insert((vertex, node), row);
                }
            }
            if stage_one {
                state.edges.extend(plan.edges);
            } else {
                for (vertex, entry) in plan.entries {
                    state.dst_entry.insert(vertex, entry);
                    words += 2;
                }
            }
            for (vertex, rest, origins) in std::mem::take(&mut locs[machine]) {
                if stage_one {
                    words += 1 + rest.len() as u64;
                    state.out_locs.insert(vertex, rest);
                } else {
                    words += 1 + origins.len() as u64;
                    state.in_locs.insert(vertex, origins);
                }
            }
            ctx.add_overhead(words);
            Ok(())
        })
        .map_err(crate::orchestrate::OrchError::from)?;
    Ok(())
}
