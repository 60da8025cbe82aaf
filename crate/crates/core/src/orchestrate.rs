//! Push-pull task-data orchestration over the BSP simulator.
//!
//! One stage runs four substages:
//!
//! 1. **Contention detection** — every task is wrapped in a level-0
//!    meta-task; per-address sets climb the communication forest toward
//!    the address owner, merging (and spilling) along the way. Tasks with
//!    fewer than `C` contenders arrive at the owner inline, i.e. they
//!    were pushed directly with no extra round.
//! 2. **Co-location** — owners read each contended value once and send it
//!    down the subset tree implied by the merged set's slot references;
//!    every machine holding spilled tasks receives the value.
//! 3. **Execution** — every machine runs its resident tasks exactly once
//!    against the values that arrived.
//! 4. **Write-back** — per-slot partial values are ⊗-combined up the
//!    subset tree in canonical child order; the owner applies the final
//!    write once. Task outputs return directly to their origin machines.
//!
//! The driver is sequential and fully deterministic: all cross-machine
//! interaction is message passing, every fold iterates keyed B-tree maps,
//! and phase lengths are fixed by the forest height and the deepest
//! subset tree.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::bsp::{Cluster, CostCounters, Message, StepCtx};
use crate::forest::{default_fanout, ForestConfig, ParentRoute};
use crate::meta::{Arena, MetaContent, MetaTaskSet};
use crate::rng::SplitMix64;
use crate::task::TaskContext;
use crate::wire::{Wire, WireError, WireResult};

/// Maps a data address to the machine owning its shard entry.
pub type OwnerFn = Arc<dyn Fn(u64) -> Option<usize>>;

/// Contiguous-range owner function over a key space of size `key_space`.
pub fn range_owner(key_space: u64, p: usize) -> OwnerFn {
    Arc::new(move |addr| {
        if addr < key_space {
            Some(((addr as u128 * p as u128) / key_space as u128) as usize)
        } else {
            None
        }
    })
}

/// Per-machine state for orchestration workloads: the data shard, the
/// spill arena, and a seeded generator.
pub struct OrchMachine<D> {
    pub shard: BTreeMap<u64, D>,
    pub arena: Arena,
    pub rng: SplitMix64,
}

impl<D> OrchMachine<D> {
    pub fn new(seed: u64, machine: usize) -> Self {
        Self {
            shard: BTreeMap::new(),
            arena: Arena::new(),
            rng: SplitMix64::derive(seed, 0x6d61_6368 ^ machine as u64),
        }
    }
}

/// Anything substage 1 can spill into. Lets the graph engine reuse the
/// contention-detection round on its own machine type.
pub trait SpillHost {
    fn arena_mut(&mut self) -> &mut Arena;
}

impl<D> SpillHost for OrchMachine<D> {
    fn arena_mut(&mut self) -> &mut Arena {
        &mut self.arena
    }
}

/// What the user function returns for one task.
pub struct ExecResult<V, O> {
    /// One value per task address, in address order.
    pub values: Vec<V>,
    /// Optional output returned to the task's origin machine.
    pub output: Option<O>,
}

/// Task execution function: payload plus fetched data values in address
/// order, producing one value per address and an optional output.
pub type ExecFn<D, V, O> = Arc<dyn Fn(&TaskContext, &[D]) -> ExecResult<V, O>>;
/// Shard read.
pub type GetFn<D> = Arc<dyn Fn(&BTreeMap<u64, D>, u64) -> D>;
/// Shard update with the fully aggregated value.
pub type WriteBackFn<D, V> = Arc<dyn Fn(&mut BTreeMap<u64, D>, u64, V)>;
/// Associative value combiner.
pub type CombineFn<V> = Arc<dyn Fn(V, V) -> V>;

/// The orchestration interface: `exec` runs a task against its data,
/// `get` reads a shard entry, `write_back` applies an aggregated value,
/// and `combine` is the associative ⊗ used to pre-merge values.
///
/// Write-backs must be merge-able: there is no non-⊗ path, so a spec
/// without a combine cannot be constructed.
pub struct OrchSpec<D, V, O> {
    pub exec: ExecFn<D, V, O>,
    pub get: GetFn<D>,
    pub write_back: WriteBackFn<D, V>,
    pub combine: CombineFn<V>,
    /// Meta-task chunk size C.
    pub chunk_size: u32,
    /// Communication-forest fanout; defaults from the batch size.
    pub fanout: Option<usize>,
}

impl<D, V, O> Clone for OrchSpec<D, V, O> {
    fn clone(&self) -> Self {
        Self {
            exec: self.exec.clone(),
            get: self.get.clone(),
            write_back: self.write_back.clone(),
            combine: self.combine.clone(),
            chunk_size: self.chunk_size,
            fanout: self.fanout,
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchError {
    #[error("task from machine {origin} targets unowned address {addr}")]
    AddressUnowned { origin: usize, addr: u64 },
    #[error("task list count {got} does not match machine count {p}")]
    BadTaskLists { got: usize, p: usize },
    #[error(transparent)]
    Bsp(#[from] crate::bsp::BspError),
    #[error("wire decode failed: {0}")]
    Wire(#[from] WireError),
}

/// Knobs that do not change results, only instrumentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageOptions {
    /// Reverse packet order inside each envelope before sending. Results
    /// must be unchanged; used to test emission-order independence.
    pub emit_reversed: bool,
}

/// Messages sent per kind; probes for tests and reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PacketCounts {
    pub route: u64,
    pub value: u64,
    pub sec_req: u64,
    pub sec_val: u64,
    pub part: u64,
    pub direct: u64,
    pub out: u64,
    /// Value fetch requests (pull-style strategies).
    pub fetch: u64,
}

/// Per-stage accounting beyond the raw counters.
#[derive(Debug, Clone, Default)]
pub struct OrchStats {
    pub supersteps_used: u64,
    pub s1_supersteps: u64,
    pub forest_height: u64,
    pub fanout: usize,
    /// Highest meta-task level over all final sets.
    pub max_level: u32,
    /// Supersteps the deepest subset tree costs: down sweep (value read +
    /// `max_level` hops) plus up sweep (`max_level` hops + final apply),
    /// i.e. `2 * max_level + 2`.
    pub max_subset_tree_depth: u64,
    /// `2 * (forest_height + 1) + max_subset_tree_depth`, plus 2 when the
    /// batch contains multi-address tasks (one request/reply round).
    pub superstep_budget: u64,
    pub executed_tasks: u64,
    pub packets: PacketCounts,
    /// Communication words charged per phase, in phase order.
    pub phase_words: Vec<(&'static str, u64)>,
}

/// Result of one orchestration stage.
pub struct OrchOutcome<O> {
    /// Per origin machine, `(local_index, output)` sorted by index.
    pub outputs: Vec<Vec<(u32, O)>>,
    pub stats: OrchStats,
    /// Counter movement attributable to this stage.
    pub delta: CostCounters,
}

// ---------------------------------------------------------------------------
// Wire packets
// ---------------------------------------------------------------------------

/// Sentinel fold handle for the owner-side root context of an address.
/// Kept below 2^32 so handles ride the wire as u32.
const ROOT_CTX: u64 = u32::MAX as u64;

enum Pkt<D, V, O> {
    /// Substage 1: a set climbing toward `root`, currently addressed to
    /// tree node `bfs`.
    Route {
        root: u32,
        bfs: u64,
        addr: u64,
        set: MetaTaskSet,
    },
    /// Substage 2: `value` of `addr` for the slot `handle` on the
    /// destination machine; replies go to the sender's `parent_handle`.
    Value {
        addr: u64,
        value: D,
        handle: u64,
        parent_handle: u64,
    },
    /// Secondary-address value request (requester = message source).
    SecReq { addr: u64 },
    SecVal { addr: u64, value: D },
    /// Substage 4: fold of the subtree rooted at `(child_machine,
    /// child_handle)`, targeted at the receiver's context `target_handle`.
    Part {
        addr: u64,
        target_handle: u64,
        child_machine: u32,
        child_handle: u64,
        value: V,
    },
    /// Pre-combined write-back sent straight to the owner (secondary
    /// addresses and other uncontended flows).
    Direct { addr: u64, value: V },
    /// Task output returning to its origin.
    Out { local_index: u32, value: O },
}

fn put_handle(h: u64, out: &mut Vec<u8>) {
    debug_assert!(h <= u32::MAX as u64);
    (h as u32).put(out);
}

fn take_handle(buf: &mut &[u8]) -> WireResult<u64> {
    Ok(u32::take(buf)? as u64)
}

impl<D: Wire, V: Wire, O: Wire> Wire for Pkt<D, V, O> {
    fn put(&self, out: &mut Vec<u8>) {
        match self {
            Pkt::Route {
                root,
                bfs,
                addr,
                set,
            } => {
                0u8.put(out);
                (*root as u16).put(out);
                (*bfs as u32).put(out);
                addr.put(out);
                set.put(out);
            }
            Pkt::Value {
                addr,
                value,
                handle,
                parent_handle,
            } => {
                1u8.put(out);
                addr.put(out);
                value.put(out);
                put_handle(*handle, out);
                put_handle(*parent_handle, out);
            }
            Pkt::SecReq { addr } => {
                2u8.put(out);
                addr.put(out);
            }
            Pkt::SecVal { addr, value } => {
                3u8.put(out);
                addr.put(out);
                value.put(out);
            }
            Pkt::Part {
                addr,
                target_handle,
                child_machine,
                child_handle,
                value,
            } => {
                4u8.put(out);
                addr.put(out);
                put_handle(*target_handle, out);
                (*child_machine as u16).put(out);
                put_handle(*child_handle, out);
                value.put(out);
            }
            Pkt::Direct { addr, value } => {
                5u8.put(out);
                addr.put(out);
                value.put(out);
            }
            Pkt::Out { local_index, value } => {
                6u8.put(out);
                local_index.put(out);
                value.put(out);
            }
        }
    }

    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(match u8::take(buf)? {
            0 => Pkt::Route {
                root: u16::take(buf)? as u32,
                bfs: u32::take(buf)? as u64,
                addr: u64::take(buf)?,
                set: MetaTaskSet::take(buf)?,
            },
            1 => Pkt::Value {
                addr: u64::take(buf)?,
                value: D::take(buf)?,
                handle: take_handle(buf)?,
                parent_handle: take_handle(buf)?,
            },
            2 => Pkt::SecReq {
                addr: u64::take(buf)?,
            },
            3 => Pkt::SecVal {
                addr: u64::take(buf)?,
                value: D::take(buf)?,
            },
            4 => Pkt::Part {
                addr: u64::take(buf)?,
                target_handle: take_handle(buf)?,
                child_machine: u16::take(buf)? as u32,
                child_handle: take_handle(buf)?,
                value: V::take(buf)?,
            },
            5 => Pkt::Direct {
                addr: u64::take(buf)?,
                value: V::take(buf)?,
            },
            6 => Pkt::Out {
                local_index: u32::take(buf)?,
                value: O::take(buf)?,
            },
            tag => return Err(WireError::BadTag { tag, what: "pkt" }),
        })
    }
}

/// Envelope helper: batches all packets from one machine to each
/// destination into a single message and charges serialization overhead.
struct Mailbag<D, V, O> {
    by_dst: BTreeMap<usize, Vec<Pkt<D, V, O>>>,
}

impl<D, V, O> Mailbag<D, V, O> {
    fn new() -> Self {
        Self {
            by_dst: BTreeMap::new(),
        }
    }

    fn push(&mut self, dst: usize, pkt: Pkt<D, V, O>) {
        self.by_dst.entry(dst).or_default().push(pkt);
    }
}

impl<D: Wire, V: Wire, O: Wire> Mailbag<D, V, O> {
    fn flush(
        &mut self,
        ctx: &mut StepCtx,
        counts: &mut PacketCounts,
        opts: &StageOptions,
    ) -> Result<(), String> {
        for (dst, mut pkts) in std::mem::take(&mut self.by_dst) {
            if opts.emit_reversed {
                pkts.reverse();
            }
            for p in &pkts {
                match p {
                    Pkt::Route { .. } => counts.route += 1,
                    Pkt::Value { .. } => counts.value += 1,
                    Pkt::SecReq { .. } => counts.sec_req += 1,
                    Pkt::SecVal { .. } => counts.sec_val += 1,
                    Pkt::Part { .. } => counts.part += 1,
                    Pkt::Direct { .. } => counts.direct += 1,
                    Pkt::Out { .. } => counts.out += 1,
                }
            }
            let bytes = pkts.to_bytes();
            ctx.add_overhead((bytes.len() as u64).div_ceil(8));
            ctx.send(dst, bytes).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

type DecodedInbox<D, V, O> = Vec<(usize, Pkt<D, V, O>)>;

fn decode_inbox<D: Wire, V: Wire, O: Wire>(
    inbox: &[Message],
) -> Result<DecodedInbox<D, V, O>, String> {
    let mut out = Vec::new();
    for msg in inbox {
        let pkts = Vec::<Pkt<D, V, O>>::from_bytes(&msg.payload).map_err(|e| e.to_string())?;
        for p in pkts {
            out.push((msg.src, p));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Substage 1: contention detection up the communication forest
// ---------------------------------------------------------------------------

/// Outcome of a contention-detection round: the merged set per requested
/// address at each owner, plus routing stats.
pub struct ContentionRound {
    /// `final_sets[machine]` maps addr -> merged set, for owned addrs.
    pub final_sets: Vec<BTreeMap<u64, MetaTaskSet>>,
    pub supersteps: u64,
    pub forest: ForestConfig,
    pub route_packets: u64,
}

/// Run substage 1 alone. Tasks with addresses travel toward the owner of
/// their primary address; zero-address tasks are returned per machine in
/// `stay_local`.
pub struct Substage1Input {
    pub tasks: Vec<Vec<TaskContext>>,
    pub chunk_size: u32,
    pub fanout: Option<usize>,
}

pub fn run_contention_detection<M: SpillHost>(
    cluster: &mut Cluster<M>,
    owner: &OwnerFn,
    input: Substage1Input,
    opts: &StageOptions,
) -> Result<(ContentionRound, Vec<Vec<TaskContext>>), OrchError> {
    let p = cluster.num_machines();
    if input.tasks.len() != p {
        return Err(OrchError::BadTaskLists {
            got: input.tasks.len(),
            p,
        });
    }
    let total_tasks: u64 = input.tasks.iter().map(|t| t.len() as u64).sum();
    for (m, list) in input.tasks.iter().enumerate() {
        for t in list {
            for &a in &t.addrs {
                if (owner)(a).is_none() {
                    return Err(OrchError::AddressUnowned { origin: m, addr: a });
                }
            }
        }
    }

    let fanout = input
        .fanout
        .unwrap_or_else(|| default_fanout(total_tasks.max(1), p));
    let forest = ForestConfig::new(p, fanout, crate::rng::mix_words(cluster.seed(), &[0xf0]));
    let height = forest.height();
    let chunk = input.chunk_size;

    let mut tasks_in = input.tasks;
    let mut stay_local: Vec<Vec<TaskContext>> = (0..p).map(|_| Vec::new()).collect();
    let mut final_sets: Vec<BTreeMap<u64, MetaTaskSet>> = (0..p).map(|_| BTreeMap::new()).collect();
    let mut counts = PacketCounts::default();
    let mut supersteps = 0u64;

    // S0: wrap, group by address, merge locally, send to the leaf's
    // parent in the tree rooted at the owner.
    {
        let final_sets = &mut final_sets;
        let stay_local = &mut stay_local;
        let counts = &mut counts;
        cluster.run_superstep(|machine, state, _inbox, ctx| {
            let mut groups: BTreeMap<u64, MetaTaskSet> = BTreeMap::new();
            for task in tasks_in[machine].drain(..) {
                match task.primary_addr() {
                    None => stay_local[machine].push(task),
                    Some(addr) => {
                        let wrapped = MetaTaskSet::wrap_task(task, chunk);
                        match groups.entry(addr) {
                            std::collections::btree_map::Entry::Vacant(e) => {
                                e.insert(wrapped);
                            }
                            std::collections::btree_map::Entry::Occupied(mut e) => {
                                let stats = e
                                    .get_mut()
                                    .merge(wrapped, machine as u32, state.arena_mut())
                                    .map_err(|e| e.to_string())?;
                                ctx.add_work(1);
                                ctx.add_overhead(stats.spilled_entries);
                            }
                        }
                    }
                }
            }
            let mut bag: Mailbag<(), (), ()> = Mailbag::new();
            for (addr, set) in groups {
                let root = (owner)(addr).expect("validated above");
                let leaf = forest.leaf_of(root, machine);
                match forest.parent_route(leaf).map_err(|e| e.to_string())? {
                    ParentRoute::RootReached => {
                        // P == 1: the leaf is the root; finalize locally.
                        merge_into_final(&mut final_sets[machine], addr, set, machine, state, ctx)?;
                    }
                    ParentRoute::Parent(parent) => {
                        let dst = forest.host_of(parent).map_err(|e| e.to_string())?;
                        bag.push(
                            dst,
                            Pkt::Route {
                                root: root as u32,
                                bfs: parent.bfs_index,
                                addr,
                                set,
                            },
                        );
                    }
                }
            }
            bag.flush(ctx, counts, opts)
        })?;
        supersteps += 1;
    }

    // Routing supersteps: one per tree level, leaves upward.
    for _ in 0..height {
        let final_sets = &mut final_sets;
        let counts = &mut counts;
        cluster.run_superstep(|machine, state, inbox, ctx| {
            let pkts = decode_inbox::<(), (), ()>(inbox)?;
            // Merge everything addressed to the same (root, node, addr).
            let mut nodes: BTreeMap<(u32, u64, u64), MetaTaskSet> = BTreeMap::new();
            for (_src, pkt) in pkts {
                if let Pkt::Route {
                    root,
                    bfs,
                    addr,
                    set,
                } = pkt
                {
                    match nodes.entry((root, bfs, addr)) {
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(set);
                        }
                        std::collections::btree_map::Entry::Occupied(mut e) => {
                            let stats = e
                                .get_mut()
                                .merge(set, machine as u32, state.arena_mut())
                                .map_err(|e| e.to_string())?;
                            ctx.add_work(1);
                            ctx.add_overhead(stats.spilled_entries);
                        }
                    }
                }
            }
            let mut bag: Mailbag<(), (), ()> = Mailbag::new();
            for ((root, bfs, addr), set) in nodes {
                let node = crate::forest::TreeNodeId {
                    root: root as usize,
                    bfs_index: bfs,
                };
                if bfs == 0 {
                    debug_assert_eq!(machine, root as usize);
                    merge_into_final(&mut final_sets[machine], addr, set, machine, state, ctx)?;
                } else {
                    match forest.parent_route(node).map_err(|e| e.to_string())? {
                        ParentRoute::Parent(parent) => {
                            let dst = forest.host_of(parent).map_err(|e| e.to_string())?;
                            bag.push(
                                dst,
                                Pkt::Route {
                                    root,
                                    bfs: parent.bfs_index,
                                    addr,
                                    set,
                                },
                            );
                        }
                        ParentRoute::RootReached => unreachable!("bfs != 0"),
                    }
                }
            }
            bag.flush(ctx, counts, opts)
        })?;
        supersteps += 1;
    }

    Ok((
        ContentionRound {
            final_sets,
            supersteps,
            forest,
            route_packets: counts.route,
        },
        stay_local,
    ))
}

fn merge_into_final<M: SpillHost>(
    finals: &mut BTreeMap<u64, MetaTaskSet>,
    addr: u64,
    set: MetaTaskSet,
    machine: usize,
    state: &mut M,
    ctx: &mut StepCtx,
) -> Result<(), String> {
    match finals.entry(addr) {
        std::collections::btree_map::Entry::Vacant(e) => {
            e.insert(set);
        }
        std::collections::btree_map::Entry::Occupied(mut e) => {
            let stats = e
                .get_mut()
                .merge(set, machine as u32, state.arena_mut())
                .map_err(|e| e.to_string())?;
            ctx.add_work(1);
            ctx.add_overhead(stats.spilled_entries);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Full stage
// ---------------------------------------------------------------------------

/// Fold context for one subset-tree node during write-back.
struct FoldCtx<V> {
    /// Children (machine, handle) still expected, sorted.
    expected: Vec<(u32, u64)>,
    received: BTreeMap<(u32, u64), V>,
    /// Pre-combined local execution results for this node.
    local: Option<V>,
    /// Where the completed fold goes: the owner root stash or a parent
    /// context on another machine.
    parent: FoldParent,
}

enum FoldParent {
    OwnerRoot,
    Up { machine: u32, handle: u64 },
}

/// One task waiting to execute, together with its primary value.
struct Bundle<D> {
    task: TaskContext,
    primary_value: Option<D>,
    /// Fold context handle on this machine (ROOT_CTX for owner-inline).
    fold_handle: u64,
}

struct Scratch<D, V, O> {
    final_sets: BTreeMap<u64, MetaTaskSet>,
    bundles: Vec<Bundle<D>>,
    sec_values: BTreeMap<u64, D>,
    folds: BTreeMap<(u64, u64), FoldCtx<V>>,
    /// Completed tree folds per owned address.
    tree_results: BTreeMap<u64, V>,
    /// Direct write-back contributions per owned address, by sender.
    directs: BTreeMap<u64, BTreeMap<u32, V>>,
    outputs: Vec<(u32, O)>,
}

impl<D, V, O> Default for Scratch<D, V, O> {
    fn default() -> Self {
        Self {
            final_sets: BTreeMap::new(),
            bundles: Vec::new(),
            sec_values: BTreeMap::new(),
            folds: BTreeMap::new(),
            tree_results: BTreeMap::new(),
            directs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }
}

/// Execute one full orchestration stage.
pub fn orchestrate<D, V, O>(
    cluster: &mut Cluster<OrchMachine<D>>,
    owner: &OwnerFn,
    tasks: Vec<Vec<TaskContext>>,
    spec: &OrchSpec<D, V, O>,
    opts: &StageOptions,
) -> Result<OrchOutcome<O>, OrchError>
where
    D: Wire + Clone + 'static,
    V: Wire + Clone + 'static,
    O: Wire + Clone + 'static,
{
    let p = cluster.num_machines();
    let before = cluster.counters().clone();
    let total_tasks: u64 = tasks.iter().map(|t| t.len() as u64).sum();
    let has_multi = tasks
        .iter()
        .flatten()
        .any(|t| t.addrs.len() > 1);

    let mut stats = OrchStats::default();
    let mut phase_mark = before.total_sent();
    let mut phase_words: Vec<(&'static str, u64)> = Vec::new();

    // Stage boundaries reset spill storage; slots only live within one
    // stage for plain orchestration.
    for i in 0..p {
        cluster.machine_mut(i).arena.clear();
    }

    // --- Substage 1 -------------------------------------------------------
    let (round, stay_local) = run_contention_detection(
        cluster,
        owner,
        Substage1Input {
            tasks,
            chunk_size: spec.chunk_size,
            fanout: spec.fanout,
        },
        opts,
    )?;
    stats.s1_supersteps = round.supersteps;
    stats.forest_height = round.forest.height() as u64;
    stats.fanout = round.forest.fanout;
    stats.packets.route = round.route_packets;
    phase_words.push((
        "contention_detection",
        cluster.counters().total_sent() - phase_mark,
    ));
    phase_mark = cluster.counters().total_sent();

    let mut scratch: Vec<Scratch<D, V, O>> = (0..p).map(|_| Scratch::default()).collect();
    for (m, finals) in round.final_sets.into_iter().enumerate() {
        scratch[m].final_sets = finals;
    }
    for (m, locals) in stay_local.into_iter().enumerate() {
        for task in locals {
            scratch[m].bundles.push(Bundle {
                task,
                primary_value: None,
                fold_handle: ROOT_CTX,
            });
        }
    }

    let max_level: u32 = scratch
        .iter()
        .flat_map(|s| s.final_sets.values())
        .filter_map(MetaTaskSet::max_level)
        .max()
        .unwrap_or(0);
    stats.max_level = max_level;
    stats.max_subset_tree_depth = 2 * max_level as u64 + 2;
    stats.superstep_budget = 2 * (stats.forest_height + 1)
        + stats.max_subset_tree_depth
        + if has_multi { 2 } else { 0 };

    let mut counts = PacketCounts::default();

    // --- Substage 2: broadcast values down the subset trees ---------------
    // B0: owners read each value once, queue inline tasks, send one Value
    // per top-level slot reference.
    {
        let scratch = &mut scratch;
        let counts = &mut counts;
        cluster.run_superstep(|machine, state, _inbox, ctx| {
            let mut bag: Mailbag<D, V, O> = Mailbag::new();
            let s = &mut scratch[machine];
            for (addr, set) in &s.final_sets {
                let value = (spec.get)(&state.shard, *addr);
                let mut expected = Vec::new();
                for entry in set.entries() {
                    match &entry.content {
                        MetaContent::Task(t) => s.bundles.push(Bundle {
                            task: t.clone(),
                            primary_value: Some(value.clone()),
                            fold_handle: ROOT_CTX,
                        }),
                        MetaContent::Slot {
                            machine: slot_machine,
                            handle,
                            ..
                        } => {
                            expected.push((*slot_machine, *handle));
                            bag.push(
                                *slot_machine as usize,
                                Pkt::Value {
                                    addr: *addr,
                                    value: value.clone(),
                                    handle: *handle,
                                    parent_handle: ROOT_CTX,
                                },
                            );
                        }
                    }
                }
                expected.sort_unstable();
                s.folds.insert(
                    (*addr, ROOT_CTX),
                    FoldCtx {
                        expected,
                        received: BTreeMap::new(),
                        local: None,
                        parent: FoldParent::OwnerRoot,
                    },
                );
            }
            bag.flush(ctx, counts, opts)
        })?;
    }

    // B1..B_max: expand slots one level per superstep.
    for _ in 0..max_level {
        let scratch = &mut scratch;
        let counts = &mut counts;
        cluster.run_superstep(|machine, state, inbox, ctx| {
            let mut bag: Mailbag<D, V, O> = Mailbag::new();
            let pkts = decode_inbox::<D, V, O>(inbox)?;
            let s = &mut scratch[machine];
            for (src, pkt) in pkts {
                if let Pkt::Value {
                    addr,
                    value,
                    handle,
                    parent_handle,
                } = pkt
                {
                    let slot = state
                        .arena
                        .get(handle)
                        .ok_or_else(|| format!("dangling handle {handle} on {machine}"))?
                        .to_vec();
                    let mut expected = Vec::new();
                    for entry in slot {
                        match entry.content {
                            MetaContent::Task(t) => s.bundles.push(Bundle {
                                task: t,
                                primary_value: Some(value.clone()),
                                fold_handle: handle,
                            }),
                            MetaContent::Slot {
                                machine: child_machine,
                                handle: child_handle,
                                ..
                            } => {
                                expected.push((child_machine, child_handle));
                                bag.push(
                                    child_machine as usize,
                                    Pkt::Value {
                                        addr,
                                        value: value.clone(),
                                        handle: child_handle,
                                        parent_handle: handle,
                                    },
                                );
                            }
                        }
                    }
                    expected.sort_unstable();
                    s.folds.insert(
                        (addr, handle),
                        FoldCtx {
                            expected,
                            received: BTreeMap::new(),
                            local: None,
                            parent: FoldParent::Up {
                                machine: src as u32,
                                handle: parent_handle,
                            },
                        },
                    );
                }
            }
            bag.flush(ctx, counts, opts)
        })?;
    }
    phase_words.push(("colocate", cluster.counters().total_sent() - phase_mark));
    phase_mark = cluster.counters().total_sent();

    // --- Secondary-address values (only for multi-address batches) --------
    if has_multi {
        {
            let scratch = &mut scratch;
            let counts = &mut counts;
            cluster.run_superstep(|machine, _state, _inbox, ctx| {
                let mut bag: Mailbag<D, V, O> = Mailbag::new();
                let s = &scratch[machine];
                let mut wanted: Vec<u64> = s
                    .bundles
                    .iter()
                    .flat_map(|b| b.task.addrs.iter().skip(1).copied())
                    .collect();
                wanted.sort_unstable();
                wanted.dedup();
                for addr in wanted {
                    let dst = (owner)(addr).expect("validated");
                    bag.push(dst, Pkt::SecReq { addr });
                }
                bag.flush(ctx, counts, opts)
            })?;
        }
        {
            let scratch = &mut scratch;
            let counts = &mut counts;
            cluster.run_superstep(|machine, state, inbox, ctx| {
                let mut bag: Mailbag<D, V, O> = Mailbag::new();
                let pkts = decode_inbox::<D, V, O>(inbox)?;
                let _ = &scratch[machine];
                for (src, pkt) in pkts {
                    if let Pkt::SecReq { addr } = pkt {
                        let value = (spec.get)(&state.shard, addr);
                        bag.push(src, Pkt::SecVal { addr, value });
                    }
                }
                bag.flush(ctx, counts, opts)
            })?;
        }
        phase_words.push(("secondary_values", cluster.counters().total_sent() - phase_mark));
        phase_mark = cluster.counters().total_sent();
    }

    // --- Substage 3: execute; substage 4 leaf replies ----------------------
    let mut executed_total = 0u64;
    {
        let scratch = &mut scratch;
        let counts = &mut counts;
        let executed_total = &mut executed_total;
        cluster.run_superstep(|machine, _state, inbox, ctx| {
            let s = &mut scratch[machine];
            // SecVal arrivals land just before execution.
            for (_src, pkt) in decode_inbox::<D, V, O>(inbox)? {
                if let Pkt::SecVal { addr, value } = pkt {
                    s.sec_values.insert(addr, value);
                }
            }

            let mut bag: Mailbag<D, V, O> = Mailbag::new();
            let mut bundles = std::mem::take(&mut s.bundles);
            bundles.sort_by_key(|b| {
                (
                    b.task.primary_addr().unwrap_or(u64::MAX),
                    b.fold_handle,
                    b.task.origin,
                    b.task.local_index,
                )
            });
            let mut direct_acc: BTreeMap<u64, V> = BTreeMap::new();
            for bundle in bundles {
                let task = &bundle.task;
                let mut data = Vec::with_capacity(task.addrs.len());
                if let Some(v) = &bundle.primary_value {
                    data.push(v.clone());
                    for a in task.addrs.iter().skip(1) {
                        data.push(
                            s.sec_values
                                .get(a)
                                .cloned()
                                .ok_or_else(|| format!("missing secondary value for {a}"))?,
                        );
                    }
                }
                let result = (spec.exec)(task, &data);
                ctx.add_work(1);
                *executed_total += 1;
                if result.values.len() != task.addrs.len() {
                    return Err(format!(
                        "exec returned {} values for {} addresses",
                        result.values.len(),
                        task.addrs.len()
                    ));
                }
                for (i, (addr, value)) in task.addrs.iter().zip(result.values).enumerate() {
                    if i == 0 {
                        let fold = s
                            .folds
                            .get_mut(&(*addr, bundle.fold_handle))
                            .ok_or_else(|| format!("missing fold ctx for {addr}"))?;
                        fold.local = Some(match fold.local.take() {
                            None => value,
                            Some(acc) => {
                                ctx.add_work(1);
                                (spec.combine)(acc, value)
                            }
                        });
                    } else {
                        // Secondary contributions go straight to the owner,
                        // pre-combined per (machine, address).
                        match direct_acc.remove(addr) {
                            None => {
                                direct_acc.insert(*addr, value);
                            }
                            Some(acc) => {
                                ctx.add_work(1);
                                direct_acc.insert(*addr, (spec.combine)(acc, value));
                            }
                        }
                    }
                }
                if let Some(out) = result.output {
                    bag.push(
                        task.origin as usize,
                        Pkt::Out {
                            local_index: task.local_index,
                            value: out,
                        },
                    );
                }
            }
            for (addr, value) in direct_acc {
                let dst = (owner)(addr).expect("validated");
                bag.push(dst, Pkt::Direct { addr, value });
            }
            flush_complete_folds(s, machine, &mut bag, ctx, &spec.combine)?;
            bag.flush(ctx, counts, opts)
        })?;
    }
    stats.executed_tasks = executed_total;
    phase_words.push(("execute", cluster.counters().total_sent() - phase_mark));
    phase_mark = cluster.counters().total_sent();

    // --- Substage 4: fold partials up the subset trees ---------------------
    for _ in 0..max_level {
        let scratch = &mut scratch;
        let counts = &mut counts;
        cluster.run_superstep(|machine, _state, inbox, ctx| {
            let s = &mut scratch[machine];
            let mut bag: Mailbag<D, V, O> = Mailbag::new();
            absorb_replies(s, decode_inbox::<D, V, O>(inbox)?)?;
            flush_complete_folds(s, machine, &mut bag, ctx, &spec.combine)?;
            bag.flush(ctx, counts, opts)
        })?;
    }

    // --- Finalize: apply ⊙ once per address at the owner -------------------
    {
        let scratch = &mut scratch;
        cluster.run_superstep(|machine, state, inbox, ctx| {
            let s = &mut scratch[machine];
            absorb_replies(s, decode_inbox::<D, V, O>(inbox)?)?;
            debug_assert!(s.folds.is_empty(), "unfinished folds on {machine}");

            let tree_results = std::mem::take(&mut s.tree_results);
            let mut directs = std::mem::take(&mut s.directs);
            let mut addrs: Vec<u64> = tree_results
                .keys()
                .chain(directs.keys())
                .copied()
                .collect();
            addrs.sort_unstable();
            addrs.dedup();
            for addr in addrs {
                let mut agg: Option<V> = tree_results.get(&addr).cloned();
                if let Some(by_machine) = directs.remove(&addr) {
                    for (_m, v) in by_machine {
                        agg = Some(match agg.take() {
                            None => v,
                            Some(acc) => {
                                ctx.add_work(1);
                                (spec.combine)(acc, v)
                            }
                        });
                    }
                }
                if let Some(agg) = agg {
                    (spec.write_back)(&mut state.shard, addr, agg);
                }
            }
            Ok(())
        })?;
    }

    let after = cluster.counters().clone();
    phase_words.push(("write_back", after.total_sent() - phase_mark));

    // Collect outputs that arrived at origin machines. Out packets arrive
    // at most one superstep after execution, which the reduce loop or the
    // finalize inbox above has absorbed.
    let mut outputs: Vec<Vec<(u32, O)>> = Vec::with_capacity(p);
    for s in &mut scratch {
        let mut outs = std::mem::take(&mut s.outputs);
        outs.sort_by_key(|(i, _)| *i);
        outputs.push(outs);
    }

    stats.packets = counts;
    stats.packets.route = round.route_packets;
    stats.supersteps_used = after.supersteps - before.supersteps;
    stats.phase_words = phase_words;

    debug_assert_eq!(stats.executed_tasks, total_tasks);
    debug_assert_eq!(cluster.pending_messages(), 0, "stage left messages in flight");

    Ok(OrchOutcome {
        outputs,
        stats,
        delta: after.delta_since(&before),
    })
}

/// Stash Part / Direct / Out arrivals into the machine's scratch.
fn absorb_replies<D, V, O>(
    s: &mut Scratch<D, V, O>,
    pkts: Vec<(usize, Pkt<D, V, O>)>,
) -> Result<(), String> {
    for (src, pkt) in pkts {
        match pkt {
            Pkt::Part {
                addr,
                target_handle,
                child_machine,
                child_handle,
                value,
            } => {
                let fold = s
                    .folds
                    .get_mut(&(addr, target_handle))
                    .ok_or_else(|| format!("reply for unknown fold ({addr})"))?;
                fold.received.insert((child_machine, child_handle), value);
            }
            Pkt::Direct { addr, value } => {
                s.directs.entry(addr).or_default().insert(src as u32, value);
            }
            Pkt::Out { local_index, value } => {
                s.outputs.push((local_index, value));
            }
            _ => return Err("unexpected packet kind in reduce phase".into()),
        }
    }
    Ok(())
}

/// Emit folds whose children have all reported, in canonical child order
/// (ascending (machine, handle), local execution results first).
fn flush_complete_folds<D, V, O>(
    s: &mut Scratch<D, V, O>,
    machine: usize,
    bag: &mut Mailbag<D, V, O>,
    ctx: &mut StepCtx,
    combine: &CombineFn<V>,
) -> Result<(), String>
where
    V: Clone,
{
    let ready: Vec<(u64, u64)> = s
        .folds
        .iter()
        .filter(|(_, f)| f.received.len() == f.expected.len())
        .map(|(k, _)| *k)
        .collect();
    for key in ready {
        let fold = s.folds.remove(&key).expect("just found");
        let (addr, handle) = key;
        let mut agg = fold.local;
        // BTreeMap iteration == ascending (machine, handle).
        for (_child, v) in fold.received {
            agg = Some(match agg.take() {
                None => v,
                Some(acc) => {
                    ctx.add_work(1);
                    combine(acc, v)
                }
            });
        }
        match fold.parent {
            FoldParent::OwnerRoot => {
                if let Some(v) = agg {
                    s.tree_results.insert(addr, v);
                }
            }
            FoldParent::Up {
                machine: pm,
                handle: ph,
            } => {
                // A slot with no surviving results still must not stall its
                // parent; send the fold only when it carries a value, and
                // count the child as reported via an empty marker otherwise.
                match agg {
                    Some(v) => bag.push(
                        pm as usize,
                        Pkt::Part {
                            addr,
                            target_handle: ph,
                            child_machine: machine as u32,
                            child_handle: handle,
                            value: v,
                        },
                    ),
                    None => {
                        return Err(format!(
                            "empty fold for addr {addr} handle {handle}: every slot holds tasks"
                        ))
                    }
                }
            }
        }
    }
    Ok(())
}
