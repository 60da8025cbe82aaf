//! The three prior scheduling strategies, behind the same interface and
//! counters as the push-pull orchestrator, so comparisons are
//! apples-to-apples.
//!
//! - **direct pull**: dedup requested addresses per machine, fetch every
//!   value to the task's origin, execute there, send pre-combined
//!   write-backs to the owners.
//! - **direct push**: ship each task context to the owner of its (single)
//!   address, execute and write back there, return outputs.
//! - **sorting based**: semi-sort tasks globally by address with a
//!   sample-sort exchange, broadcast each value binomially over the
//!   contiguous machine range holding its tasks, execute, reduce the
//!   write-backs back over the same range, and return outputs to origins.

use std::collections::BTreeMap;

use crate::bsp::{Cluster, CostCounters, Message, StepCtx};
use crate::orchestrate::{
    orchestrate, OrchError, OrchMachine, OrchOutcome, OrchSpec, OrchStats, OwnerFn, PacketCounts,
    StageOptions,
};
use crate::task::TaskContext;
use crate::wire::{Wire, WireError, WireResult};

/// Strategy selector shared by the CLI and the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    DirectPush,
    DirectPull,
    Sorting,
    TdOrch,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::DirectPush,
        Strategy::DirectPull,
        Strategy::Sorting,
        Strategy::TdOrch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::DirectPush => "direct-push",
            Strategy::DirectPull => "direct-pull",
            Strategy::Sorting => "sorting",
            Strategy::TdOrch => "td-orch",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "direct-push" | "push" => Some(Strategy::DirectPush),
            "direct-pull" | "pull" => Some(Strategy::DirectPull),
            "sorting" | "sort" => Some(Strategy::Sorting),
            "td-orch" | "tdorch" => Some(Strategy::TdOrch),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error("{strategy} requires single-address tasks (task from machine {origin} has {addrs})")]
    MultiAddressUnsupported {
        strategy: &'static str,
        origin: u32,
        addrs: usize,
    },
    #[error(transparent)]
    Orch(#[from] OrchError),
}

/// Run `tasks` under the chosen strategy.
pub fn run_strategy<D, V, O>(
    strategy: Strategy,
    cluster: &mut Cluster<OrchMachine<D>>,
    owner: &OwnerFn,
    tasks: Vec<Vec<TaskContext>>,
    spec: &OrchSpec<D, V, O>,
    opts: &StageOptions,
) -> Result<OrchOutcome<O>, StrategyError>
where
    D: Wire + Clone + 'static,
    V: Wire + Clone + 'static,
    O: Wire + Clone + 'static,
{
    match strategy {
        Strategy::TdOrch => Ok(orchestrate(cluster, owner, tasks, spec, opts)?),
        Strategy::DirectPull => direct_pull(cluster, owner, tasks, spec, opts),
        Strategy::DirectPush => direct_push(cluster, owner, tasks, spec, opts),
        Strategy::Sorting => sorting_based(cluster, owner, tasks, spec, opts),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Full semi-sort key: ties on the address split across machines.
type SortKey = (u64, (u32, u32));

enum BPkt<D, V, O> {
    /// Deduplicated fetch request for `addr` (requester = source).
    Fetch { addr: u64 },
    /// Fetched value back to the requester.
    FetchVal { addr: u64, value: D },
    /// Pre-combined write-back for `addr`.
    Wb { addr: u64, value: V },
    /// Task output heading home.
    Out { local_index: u32, value: O },
    /// A task context in flight (push / sort exchange).
    Task { task: TaskContext },
    /// Sort sample / splitter exchange.
    Keys { keys: Vec<SortKey> },
    /// Range-broadcast of a value over machines [lo, hi], at `depth`.
    RangeVal {
        addr: u64,
        value: D,
        lo: u32,
        hi: u32,
        depth: u32,
    },
    /// Range-reduce of write-backs toward the owner.
    RangeWb { addr: u64, value: V },
    /// Reverse exchange: a task context restored to its origin, plus its
    /// output if any.
    TaskBack {
        task: TaskContext,
        value: Option<O>,
    },
}

impl<D: Wire, V: Wire, O: Wire> Wire for BPkt<D, V, O> {
    fn put(&self, out: &mut Vec<u8>) {
        match self {
            BPkt::Fetch { addr } => {
                0u8.put(out);
                addr.put(out);
            }
            BPkt::FetchVal { addr, value } => {
                1u8.put(out);
                addr.put(out);
                value.put(out);
            }
            BPkt::Wb { addr, value } => {
                2u8.put(out);
                addr.put(out);
                value.put(out);
            }
            BPkt::Out { local_index, value } => {
                3u8.put(out);
                local_index.put(out);
                value.put(out);
            }
            BPkt::Task { task } => {
                4u8.put(out);
                task.put(out);
            }
            BPkt::Keys { keys } => {
                5u8.put(out);
                keys.put(out);
            }
            BPkt::RangeVal {
                addr,
                value,
                lo,
                hi,
                depth,
            } => {
                6u8.put(out);
                addr.put(out);
                value.put(out);
                lo.put(out);
                hi.put(out);
                depth.put(out);
            }
            BPkt::RangeWb { addr, value } => {
                7u8.put(out);
                addr.put(out);
                value.put(out);
            }
            BPkt::TaskBack { task, value } => {
                8u8.put(out);
                task.put(out);
                value.put(out);
            }
        }
    }

    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(match u8::take(buf)? {
            0 => BPkt::Fetch {
                addr: u64::take(buf)?,
            },
            1 => BPkt::FetchVal {
                addr: u64::take(buf)?,
                value: D::take(buf)?,
            },
            2 => BPkt::Wb {
                addr: u64::take(buf)?,
                value: V::take(buf)?,
            },
            3 => BPkt::Out {
                local_index: u32::take(buf)?,
                value: O::take(buf)?,
            },
            4 => BPkt::Task {
                task: TaskContext::take(buf)?,
            },
            5 => BPkt::Keys {
                keys: Vec::<SortKey>::take(buf)?,
            },
            6 => BPkt::RangeVal {
                addr: u64::take(buf)?,
                value: D::take(buf)?,
                lo: u32::take(buf)?,
                hi: u32::take(buf)?,
                depth: u32::take(buf)?,
            },
            7 => BPkt::RangeWb {
                addr: u64::take(buf)?,
                value: V::take(buf)?,
            },
            8 => BPkt::TaskBack {
                task: TaskContext::take(buf)?,
                value: <Option<O> as Wire>::take(buf)?,
            },
            tag => return Err(WireError::BadTag { tag, what: "bpkt" }),
        })
    }
}

struct Bag<D, V, O> {
    by_dst: BTreeMap<usize, Vec<BPkt<D, V, O>>>,
}

impl<D, V, O> Bag<D, V, O> {
    fn new() -> Self {
        Self {
            by_dst: BTreeMap::new(),
        }
    }
    fn push(&mut self, dst: usize, pkt: BPkt<D, V, O>) {
        self.by_dst.entry(dst).or_default().push(pkt);
    }
}

impl<D: Wire, V: Wire, O: Wire> Bag<D, V, O> {
    fn flush(&mut self, ctx: &mut StepCtx, opts: &StageOptions) -> Result<(), String> {
        for (dst, mut pkts) in std::mem::take(&mut self.by_dst) {
            if opts.emit_reversed {
                pkts.reverse();
            }
            let bytes = pkts.to_bytes();
            ctx.add_overhead((bytes.len() as u64).div_ceil(8));
            ctx.send(dst, bytes).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

type Decoded<D, V, O> = Vec<(usize, BPkt<D, V, O>)>;

fn decode<D: Wire, V: Wire, O: Wire>(inbox: &[Message]) -> Result<Decoded<D, V, O>, String> {
    let mut out = Vec::new();
    for msg in inbox {
        for p in Vec::<BPkt<D, V, O>>::from_bytes(&msg.payload).map_err(|e| e.to_string())? {
            out.push((msg.src, p));
        }
    }
    Ok(out)
}

fn require_single_address(
    strategy: &'static str,
    tasks: &[Vec<TaskContext>],
) -> Result<(), StrategyError> {
    for list in tasks {
        for t in list {
            if t.addrs.len() > 1 {
                return Err(StrategyError::MultiAddressUnsupported {
                    strategy,
                    origin: t.origin,
                    addrs: t.addrs.len(),
                });
            }
        }
    }
    Ok(())
}

fn validate_owned(owner: &OwnerFn, tasks: &[Vec<TaskContext>]) -> Result<(), OrchError> {
    for (m, list) in tasks.iter().enumerate() {
        for t in list {
            for &a in &t.addrs {
                if (owner)(a).is_none() {
                    return Err(OrchError::AddressUnowned { origin: m, addr: a });
                }
            }
        }
    }
    Ok(())
}

/// Execute a batch of co-located tasks in canonical (origin, index)
/// order, pre-combining write-back values per address. With
/// `restore_context` the whole task context travels home (the sorting
/// strategy's reverse exchange); otherwise only outputs return.
fn execute_batch<D, V, O>(
    batch: &mut Vec<(TaskContext, Vec<D>)>,
    spec: &OrchSpec<D, V, O>,
    ctx: &mut StepCtx,
    wb_acc: &mut BTreeMap<u64, V>,
    bag: &mut Bag<D, V, O>,
    executed: &mut u64,
    restore_context: bool,
) -> Result<(), String>
where
    D: Clone,
    V: Clone,
{
    batch.sort_by_key(|(t, _)| (t.origin, t.local_index));
    for (task, data) in batch.drain(..) {
        let result = (spec.exec)(&task, &data);
        ctx.add_work(1);
        *executed += 1;
        if result.values.len() != task.addrs.len() {
            return Err(format!(
                "exec returned {} values for {} addresses",
                result.values.len(),
                task.addrs.len()
            ));
        }
        for (addr, value) in task.addrs.iter().zip(result.values) {
            match wb_acc.remove(addr) {
                None => {
                    wb_acc.insert(*addr, value);
                }
                Some(acc) => {
                    ctx.add_work(1);
                    wb_acc.insert(*addr, (spec.combine)(acc, value));
                }
            }
        }
        if restore_context {
            let dst = task.origin as usize;
            bag.push(
                dst,
                BPkt::TaskBack {
                    task,
                    value: result.output,
                },
            );
        } else if let Some(out) = result.output {
            bag.push(
                task.origin as usize,
                BPkt::Out {
                    local_index: task.local_index,
                    value: out,
                },
            );
        }
    }
    Ok(())
}

/// Fold write-back contributions at the owner in ascending sender order
/// and apply the user write-back once per address.
fn apply_writebacks<D, V, O>(
    shard: &mut BTreeMap<u64, D>,
    contribs: BTreeMap<u64, BTreeMap<u32, V>>,
    spec: &OrchSpec<D, V, O>,
    ctx: &mut StepCtx,
) {
    for (addr, by_sender) in contribs {
        let mut agg: Option<V> = None;
        for (_src, v) in by_sender {
            agg = Some(match agg.take() {
                None => v,
                Some(acc) => {
                    ctx.add_work(1);
                    (spec.combine)(acc, v)
                }
            });
        }
        if let Some(agg) = agg {
            (spec.write_back)(shard, addr, agg);
        }
    }
}

fn finish<D, O>(
    cluster: &Cluster<OrchMachine<D>>,
    before: &CostCounters,
    mut outputs: Vec<Vec<(u32, O)>>,
    executed: u64,
    mut stats: OrchStats,
) -> OrchOutcome<O> {
    for outs in &mut outputs {
        outs.sort_by_key(|(i, _)| *i);
    }
    let after = cluster.counters().clone();
    stats.supersteps_used = after.supersteps - before.supersteps;
    stats.executed_tasks = executed;
    OrchOutcome {
        outputs,
        stats,
        delta: after.delta_since(before),
    }
}

// ---------------------------------------------------------------------------
// Direct pull
// ---------------------------------------------------------------------------

pub fn direct_pull<D, V, O>(
    cluster: &mut Cluster<OrchMachine<D>>,
    owner: &OwnerFn,
    mut tasks: Vec<Vec<TaskContext>>,
    spec: &OrchSpec<D, V, O>,
    opts: &StageOptions,
) -> Result<OrchOutcome<O>, StrategyError>
where
    D: Wire + Clone + 'static,
    V: Wire + Clone + 'static,
    O: Wire + Clone + 'static,
{
    validate_owned(owner, &tasks)?;
    let p = cluster.num_machines();
    let before = cluster.counters().clone();
    let mut fetch_requests = 0u64;

    // Round 1: dedup addresses per machine, request each once.
    {
        let tasks = &tasks;
        let fetch_requests = &mut fetch_requests;
        cluster
            .run_superstep(|machine, _state, _inbox, ctx| {
                let mut wanted: Vec<u64> = tasks[machine]
                    .iter()
                    .flat_map(|t| t.addrs.iter().copied())
                    .collect();
                wanted.sort_unstable();
                wanted.dedup();
                let mut bag: Bag<D, V, O> = Bag::new();
                for addr in wanted {
                    *fetch_requests += 1;
                    bag.push((owner)(addr).unwrap(), BPkt::Fetch { addr });
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Round 2: owners reply with values.
    cluster
        .run_superstep(|_machine, state, inbox, ctx| {
            let mut bag: Bag<D, V, O> = Bag::new();
            for (src, pkt) in decode::<D, V, O>(inbox)? {
                if let BPkt::Fetch { addr } = pkt {
                    let value = (spec.get)(&state.shard, addr);
                    bag.push(src, BPkt::FetchVal { addr, value });
                }
            }
            bag.flush(ctx, opts)
        })
        .map_err(OrchError::from)?;

    // Round 3: execute locally, send combined write-backs to owners.
    let mut executed = 0u64;
    {
        let tasks = &mut tasks;
        let executed = &mut executed;
        cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                let mut values: BTreeMap<u64, D> = BTreeMap::new();
                for (_src, pkt) in decode::<D, V, O>(inbox)? {
                    if let BPkt::FetchVal { addr, value } = pkt {
                        values.insert(addr, value);
                    }
                }
                let mut batch: Vec<(TaskContext, Vec<D>)> = tasks[machine]
                    .drain(..)
                    .map(|t| {
                        let data = t
                            .addrs
                            .iter()
                            .map(|a| values.get(a).cloned().expect("fetched"))
                            .collect();
                        (t, data)
                    })
                    .collect();
                let mut bag: Bag<D, V, O> = Bag::new();
                let mut wb_acc: BTreeMap<u64, V> = BTreeMap::new();
                execute_batch(&mut batch, spec, ctx, &mut wb_acc, &mut bag, executed, false)?;
                for (addr, value) in wb_acc {
                    bag.push((owner)(addr).unwrap(), BPkt::Wb { addr, value });
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Round 4: owners fold and apply; outputs land at origins.
    let mut outputs: Vec<Vec<(u32, O)>> = (0..p).map(|_| Vec::new()).collect();
    {
        let outputs = &mut outputs;
        cluster
            .run_superstep(|machine, state, inbox, ctx| {
                let mut contribs: BTreeMap<u64, BTreeMap<u32, V>> = BTreeMap::new();
                for (src, pkt) in decode::<D, V, O>(inbox)? {
                    match pkt {
                        BPkt::Wb { addr, value } => {
                            contribs.entry(addr).or_default().insert(src as u32, value);
                        }
                        BPkt::Out { local_index, value } => {
                            outputs[machine].push((local_index, value));
                        }
                        _ => {}
                    }
                }
                apply_writebacks(&mut state.shard, contribs, spec, ctx);
                Ok(())
            })
            .map_err(OrchError::from)?;
    }

    let stats = OrchStats {
        packets: PacketCounts {
            fetch: fetch_requests,
            ..Default::default()
        },
        ..Default::default()
    };
    Ok(finish(cluster, &before, outputs, executed, stats))
}

// ---------------------------------------------------------------------------
// Direct push
// ---------------------------------------------------------------------------

pub fn direct_push<D, V, O>(
    cluster: &mut Cluster<OrchMachine<D>>,
    owner: &OwnerFn,
    mut tasks: Vec<Vec<TaskContext>>,
    spec: &OrchSpec<D, V, O>,
    opts: &StageOptions,
) -> Result<OrchOutcome<O>, StrategyError>
where
    D: Wire + Clone + 'static,
    V: Wire + Clone + 'static,
    O: Wire + Clone + 'static,
{
    require_single_address("direct-push", &tasks)?;
    validate_owned(owner, &tasks)?;
    let p = cluster.num_machines();
    let before = cluster.counters().clone();

    // Round 1: ship each task to the owner of its address.
    {
        let tasks = &mut tasks;
        cluster
            .run_superstep(|machine, _state, _inbox, ctx| {
                let mut bag: Bag<D, V, O> = Bag::new();
                for task in tasks[machine].drain(..) {
                    let dst = match task.primary_addr() {
                        Some(addr) => (owner)(addr).unwrap(),
                        None => machine,
                    };
                    bag.push(dst, BPkt::Task { task });
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Round 2: owners execute, fold, write back locally, return outputs.
    let mut executed = 0u64;
    {
        let executed = &mut executed;
        cluster
            .run_superstep(|_machine, state, inbox, ctx| {
                let mut batch: Vec<(TaskContext, Vec<D>)> = Vec::new();
                for (_src, pkt) in decode::<D, V, O>(inbox)? {
                    if let BPkt::Task { task } = pkt {
                        let data = task
                            .addrs
                            .iter()
                            .map(|a| (spec.get)(&state.shard, *a))
                            .collect();
                        batch.push((task, data));
                    }
                }
                let mut bag: Bag<D, V, O> = Bag::new();
                let mut wb_acc: BTreeMap<u64, V> = BTreeMap::new();
                execute_batch(&mut batch, spec, ctx, &mut wb_acc, &mut bag, executed, false)?;
                for (addr, agg) in wb_acc {
                    (spec.write_back)(&mut state.shard, addr, agg);
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Round 3: outputs arrive home.
    let mut outputs: Vec<Vec<(u32, O)>> = (0..p).map(|_| Vec::new()).collect();
    {
        let outputs = &mut outputs;
        cluster
            .run_superstep(|machine, _state, inbox, _ctx| {
                for (_src, pkt) in decode::<D, V, O>(inbox)? {
                    if let BPkt::Out { local_index, value } = pkt {
                        outputs[machine].push((local_index, value));
                    }
                }
                Ok(())
            })
            .map_err(OrchError::from)?;
    }

    Ok(finish(
        cluster,
        &before,
        outputs,
        executed,
        OrchStats::default(),
    ))
}

// ---------------------------------------------------------------------------
// Sorting based
// ---------------------------------------------------------------------------

/// Extra probes for the sorting strategy.
#[derive(Debug, Default, Clone, Copy)]
pub struct SortingProbes {
    /// Deepest forwarding hop used by any range broadcast.
    pub max_broadcast_depth: u32,
}

/// Per-address node of the range broadcast/reduce tree on one machine.
struct RangeNode<V> {
    parent: u32,
    children: Vec<u32>,
    got: BTreeMap<u32, V>,
    own: Option<V>,
    done: bool,
}

pub fn sorting_based<D, V, O>(
    cluster: &mut Cluster<OrchMachine<D>>,
    owner: &OwnerFn,
    tasks: Vec<Vec<TaskContext>>,
    spec: &OrchSpec<D, V, O>,
    opts: &StageOptions,
) -> Result<OrchOutcome<O>, StrategyError>
where
    D: Wire + Clone + 'static,
    V: Wire + Clone + 'static,
    O: Wire + Clone + 'static,
{
    let (outcome, _probes) = sorting_based_probed(cluster, owner, tasks, spec, opts)?;
    Ok(outcome)
}

pub fn sorting_based_probed<D, V, O>(
    cluster: &mut Cluster<OrchMachine<D>>,
    owner: &OwnerFn,
    mut tasks: Vec<Vec<TaskContext>>,
    spec: &OrchSpec<D, V, O>,
    opts: &StageOptions,
) -> Result<(OrchOutcome<O>, SortingProbes), StrategyError>
where
    D: Wire + Clone + 'static,
    V: Wire + Clone + 'static,
    O: Wire + Clone + 'static,
{
    require_single_address("sorting", &tasks)?;
    validate_owned(owner, &tasks)?;
    let p = cluster.num_machines();
    let before = cluster.counters().clone();
    let mut probes = SortingProbes::default();

    let sort_key = |t: &TaskContext| {
        (
            t.primary_addr().unwrap_or(u64::MAX),
            (t.origin, t.local_index),
        )
    };

    // Pass 1a: local sort; send P regular samples to machine 0.
    {
        let tasks = &mut tasks;
        cluster
            .run_superstep(|machine, _state, _inbox, ctx| {
                tasks[machine].sort_by_key(sort_key);
                let list = &tasks[machine];
                let mut samples = Vec::with_capacity(p);
                if !list.is_empty() {
                    for j in 0..p {
                        let idx = (j + 1) * list.len() / (p + 1);
                        samples.push(sort_key(&list[idx.min(list.len() - 1)]));
                    }
                }
                let mut bag: Bag<D, V, O> = Bag::new();
                bag.push(0, BPkt::Keys { keys: samples });
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Pass 1b: machine 0 picks P-1 splitters, broadcasts them.
    cluster
        .run_superstep(|machine, _state, inbox, ctx| {
            if machine != 0 {
                return Ok(());
            }
            let mut all: Vec<SortKey> = Vec::new();
            for (_src, pkt) in decode::<D, V, O>(inbox)? {
                if let BPkt::Keys { keys } = pkt {
                    all.extend(keys);
                }
            }
            all.sort_unstable();
            let mut splitters = Vec::with_capacity(p.saturating_sub(1));
            if !all.is_empty() {
                for j in 1..p {
                    splitters.push(all[(j * all.len() / p).min(all.len() - 1)]);
                }
            }
            let mut bag: Bag<D, V, O> = Bag::new();
            for dst in 0..p {
                bag.push(
                    dst,
                    BPkt::Keys {
                        keys: splitters.clone(),
                    },
                );
            }
            bag.flush(ctx, opts)
        })
        .map_err(OrchError::from)?;

    // Pass 1c: route every task to its range machine.
    {
        let tasks = &mut tasks;
        cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                let mut splitters: Vec<SortKey> = Vec::new();
                for (_src, pkt) in decode::<D, V, O>(inbox)? {
                    if let BPkt::Keys { keys } = pkt {
                        splitters = keys;
                    }
                }
                let mut bag: Bag<D, V, O> = Bag::new();
                for task in tasks[machine].drain(..) {
                    let key = sort_key(&task);
                    let dst = splitters.partition_point(|s| *s < key).min(p - 1);
                    bag.push(dst, BPkt::Task { task });
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Pass 2a: local sort of the received run; request each distinct value.
    let mut sorted_runs: Vec<Vec<TaskContext>> = (0..p).map(|_| Vec::new()).collect();
    {
        let sorted_runs = &mut sorted_runs;
        cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                let mut run: Vec<TaskContext> = Vec::new();
                for (_src, pkt) in decode::<D, V, O>(inbox)? {
                    if let BPkt::Task { task } = pkt {
                        run.push(task);
                    }
                }
                run.sort_by_key(sort_key);
                let mut bag: Bag<D, V, O> = Bag::new();
                let mut wanted: Vec<u64> =
                    run.iter().filter_map(TaskContext::primary_addr).collect();
                wanted.sort_unstable();
                wanted.dedup();
                for addr in wanted {
                    bag.push((owner)(addr).unwrap(), BPkt::Fetch { addr });
                }
                sorted_runs[machine] = run;
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Pass 2b: owners learn each address's contiguous requester range and
    // inject the value at the head of a binomial broadcast over it.
    cluster
        .run_superstep(|_machine, state, inbox, ctx| {
            let mut ranges: BTreeMap<u64, (u32, u32)> = BTreeMap::new();
            for (src, pkt) in decode::<D, V, O>(inbox)? {
                if let BPkt::Fetch { addr } = pkt {
                    let e = ranges.entry(addr).or_insert((src as u32, src as u32));
                    e.0 = e.0.min(src as u32);
                    e.1 = e.1.max(src as u32);
                }
            }
            let mut bag: Bag<D, V, O> = Bag::new();
            for (addr, (lo, hi)) in ranges {
                let value = (spec.get)(&state.shard, addr);
                bag.push(
                    lo as usize,
                    BPkt::RangeVal {
                        addr,
                        value,
                        lo,
                        hi,
                        depth: 0,
                    },
                );
            }
            bag.flush(ctx, opts)
        })
        .map_err(OrchError::from)?;

    // Pass 2c: binomial forwarding over each range. A holder of [a, b]
    // hands [mid, b] to mid and keeps halving its own segment. The tree
    // structure is recorded for the reverse reduce.
    let mut range_nodes: Vec<BTreeMap<u64, RangeNode<V>>> =
        (0..p).map(|_| BTreeMap::new()).collect();
    let mut received_values: Vec<BTreeMap<u64, D>> = (0..p).map(|_| BTreeMap::new()).collect();
    let round_cap = 2 * (usize::BITS - p.leading_zeros()) as usize + 4;
    let mut rounds = 0usize;
    loop {
        rounds += 1;
        assert!(rounds <= round_cap, "range broadcast failed to quiesce");
        let range_nodes = &mut range_nodes;
        let received_values = &mut received_values;
        let probes = &mut probes;
        cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                let mut bag: Bag<D, V, O> = Bag::new();
                for (src, pkt) in decode::<D, V, O>(inbox)? {
                    if let BPkt::RangeVal {
                        addr,
                        value,
                        lo,
                        hi,
                        depth,
                    } = pkt
                    {
                        debug_assert_eq!(machine as u32, lo);
                        received_values[machine].insert(addr, value.clone());
                        probes.max_broadcast_depth = probes.max_broadcast_depth.max(depth);
                        let mut children = Vec::new();
                        let (a, mut b) = (lo, hi);
                        while a < b {
                            let mid = (a + b).div_ceil(2);
                            children.push(mid);
                            bag.push(
                                mid as usize,
                                BPkt::RangeVal {
                                    addr,
                                    value: value.clone(),
                                    lo: mid,
                                    hi: b,
                                    depth: depth + 1,
                                },
                            );
                            b = mid - 1;
                        }
                        range_nodes[machine].insert(
                            addr,
                            RangeNode {
                                parent: src as u32,
                                children,
                                got: BTreeMap::new(),
                                own: None,
                                done: false,
                            },
                        );
                    }
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
        if cluster.pending_messages() == 0 {
            break;
        }
    }

    // Pass 3: execute the sorted runs; leaf nodes of each range tree send
    // their combined write-back up immediately.
    let mut executed = 0u64;
    let mut owner_contribs: Vec<BTreeMap<u64, BTreeMap<u32, V>>> =
        (0..p).map(|_| BTreeMap::new()).collect();
    let mut outputs: Vec<Vec<(u32, O)>> = (0..p).map(|_| Vec::new()).collect();
    {
        let sorted_runs = &mut sorted_runs;
        let received_values = &received_values;
        let range_nodes = &mut range_nodes;
        let executed = &mut executed;
        cluster
            .run_superstep(|machine, _state, _inbox, ctx| {
                let run = std::mem::take(&mut sorted_runs[machine]);
                let mut batch: Vec<(TaskContext, Vec<D>)> = run
                    .into_iter()
                    .map(|t| {
                        let data = t
                            .addrs
                            .iter()
                            .map(|a| received_values[machine].get(a).cloned().expect("broadcast"))
                            .collect();
                        (t, data)
                    })
                    .collect();
                let mut bag: Bag<D, V, O> = Bag::new();
                let mut wb_acc: BTreeMap<u64, V> = BTreeMap::new();
                execute_batch(&mut batch, spec, ctx, &mut wb_acc, &mut bag, executed, true)?;
                for (addr, value) in wb_acc {
                    let node = range_nodes[machine]
                        .get_mut(&addr)
                        .expect("executed tasks imply a range node");
                    node.own = Some(value);
                }
                // Leaves (no children) reply at once.
                for (addr, node) in range_nodes[machine].iter_mut() {
                    if node.children.is_empty() && !node.done {
                        node.done = true;
                        let v = node.own.take().expect("range machine holds tasks");
                        bag.push(
                            node.parent as usize,
                            BPkt::RangeWb {
                                addr: *addr,
                                value: v,
                            },
                        );
                    }
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
    }

    // Pass 4: reduce up the range trees until quiescent; owners then
    // apply. A machine's own partial combines first (it is the lowest id
    // in its segment), children follow in ascending machine order.
    let mut rounds = 0usize;
    loop {
        rounds += 1;
        assert!(rounds <= round_cap, "range reduce failed to quiesce");
        let range_nodes = &mut range_nodes;
        let owner_contribs = &mut owner_contribs;
        let outputs = &mut outputs;
        cluster
            .run_superstep(|machine, _state, inbox, ctx| {
                let mut bag: Bag<D, V, O> = Bag::new();
                for (src, pkt) in decode::<D, V, O>(inbox)? {
                    match pkt {
                        BPkt::RangeWb { addr, value } => {
                            match range_nodes[machine].get_mut(&addr) {
                                Some(node) if !node.done => {
                                    node.got.insert(src as u32, value);
                                }
                                _ => {
                                    // No live node: this is the owner-side
                                    // final contribution.
                                    owner_contribs[machine]
                                        .entry(addr)
                                        .or_default()
                                        .insert(src as u32, value);
                                }
                            }
                        }
                        BPkt::TaskBack {
                            task,
                            value: Some(out),
                        } => {
                            outputs[machine].push((task.local_index, out));
                        }
                        _ => {}
                    }
                }
                for (addr, node) in range_nodes[machine].iter_mut() {
                    if !node.done && node.got.len() == node.children.len() {
                        node.done = true;
                        let mut agg = node.own.take();
                        for (_src, v) in std::mem::take(&mut node.got) {
                            agg = Some(match agg.take() {
                                None => v,
                                Some(acc) => {
                                    ctx.add_work(1);
                                    (spec.combine)(acc, v)
                                }
                            });
                        }
                        bag.push(
                            node.parent as usize,
                            BPkt::RangeWb {
                                addr: *addr,
                                value: agg.expect("nonempty subtree"),
                            },
                        );
                    }
                }
                bag.flush(ctx, opts)
            })
            .map_err(OrchError::from)?;
        if cluster.pending_messages() == 0 {
            break;
        }
    }

    // Final apply at the owners.
    {
        let owner_contribs = &mut owner_contribs;
        cluster
            .run_superstep(|machine, state, _inbox, ctx| {
                let contribs = std::mem::take(&mut owner_contribs[machine]);
                apply_writebacks(&mut state.shard, contribs, spec, ctx);
                Ok(())
            })
            .map_err(OrchError::from)?;
    }

    let outcome = finish(
        cluster,
        &before,
        outputs,
        executed,
        OrchStats::default(),
    );
    Ok((outcome, probes))
}
