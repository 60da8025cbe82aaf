//! Meta-tasks, meta-task sets, and the cascading merge.
//!
//! A level-0 meta-task wraps one task context. A level-l meta-task
//! (l >= 1) is a remote reference to an arena slot on some machine that
//! holds only level-(l-1) meta-tasks. A meta-task set keeps at most `C`
//! entries per level; merging two sets cascades overflowing levels
//! bottom-up, spilling each overflowing level into a fresh local arena
//! slot and promoting a single reference one level higher.
//!
//! The nesting of references is the "subset tree": expanded top-down it
//! spans exactly the machines that hold the contending tasks, which is
//! what the co-location broadcast and write-back reduction walk.

use crate::task::TaskContext;
use crate::wire::{Wire, WireError, WireResult};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetaError {
    #[error("chunk size mismatch: {a} vs {b}")]
    ChunkMismatch { a: u32, b: u32 },
    #[error("dangling arena handle {handle} on machine {machine}")]
    DanglingHandle { machine: u32, handle: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetaContent {
    /// Level 0: the wrapped task itself.
    Task(TaskContext),
    /// Level >= 1: where the spilled children live.
    Slot {
        machine: u32,
        handle: u64,
        /// Number of level-0 descendants underneath this node.
        child_count: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaTask {
    pub level: u32,
    pub content: MetaContent,
}

impl MetaTask {
    pub fn wrap(task: TaskContext) -> Self {
        Self {
            level: 0,
            content: MetaContent::Task(task),
        }
    }

    pub fn child_count(&self) -> u64 {
        match &self.content {
            MetaContent::Task(_) => 1,
            MetaContent::Slot { child_count, .. } => *child_count,
        }
    }
}

// A meta-task's level doubles as the content tag: level 0 wraps a task,
// anything higher is a slot reference. Fields ride in narrow integers;
// desk-scale batches stay far inside the asserted ranges.
impl Wire for MetaTask {
    fn put(&self, out: &mut Vec<u8>) {
        debug_assert!(self.level <= u8::MAX as u32);
        (self.level as u8).put(out);
        match &self.content {
            MetaContent::Task(t) => {
                debug_assert_eq!(self.level, 0);
                t.put(out);
            }
            MetaContent::Slot {
                machine,
                handle,
                child_count,
            } => {
                debug_assert!(self.level >= 1);
                debug_assert!(*machine <= u16::MAX as u32);
                debug_assert!(*handle <= u32::MAX as u64);
                debug_assert!(*child_count <= u32::MAX as u64);
                (*machine as u16).put(out);
                (*handle as u32).put(out);
                (*child_count as u32).put(out);
            }
        }
    }

    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        let level = u8::take(buf)? as u32;
        let content = if level == 0 {
            MetaContent::Task(TaskContext::take(buf)?)
        } else {
            MetaContent::Slot {
                machine: u16::take(buf)? as u32,
                handle: u32::take(buf)? as u64,
                child_count: u32::take(buf)? as u64,
            }
        };
        Ok(Self { level, content })
    }
}

/// Machine-local spill storage. Slots are immutable once written and are
/// freed wholesale when a stage ends.
#[derive(Debug, Default)]
pub struct Arena {
    slots: Vec<Vec<MetaTask>>,
}

impl Arena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&mut self, metas: Vec<MetaTask>) -> u64 {
        self.slots.push(metas);
        (self.slots.len() - 1) as u64
    }

    pub fn get(&self, handle: u64) -> Option<&[MetaTask]> {
        self.slots.get(handle as usize).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }
}

/// Bookkeeping returned by a merge so callers can charge counters.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MergeStats {
    /// Number of meta-tasks written into arena slots.
    pub spilled_entries: u64,
    /// Number of cascade events (one slot written each).
    pub spill_events: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaTaskSet {
    chunk_size: u32,
    /// `levels[l]` holds the level-l entries; every list stays <= C.
    levels: Vec<Vec<MetaTask>>,
    l0_total: u64,
}

impl MetaTaskSet {
    pub fn empty(chunk_size: u32) -> Self {
        assert!(chunk_size >= 1);
        Self {
            chunk_size,
            levels: Vec::new(),
            l0_total: 0,
        }
    }

    /// The canonical way a task enters the system.
    pub fn wrap_task(task: TaskContext, chunk_size: u32) -> Self {
        let mut set = Self::empty(chunk_size);
        set.levels.push(vec![MetaTask::wrap(task)]);
        set.l0_total = 1;
        set
    }

    pub fn chunk_size(&self) -> u32 {
        self.chunk_size
    }

    pub fn l0_total(&self) -> u64 {
        self.l0_total
    }

    pub fn is_empty(&self) -> bool {
        self.l0_total == 0
    }

    /// Highest level with entries, or None for an empty set.
    pub fn max_level(&self) -> Option<u32> {
        self.levels
            .iter()
            .rposition(|l| !l.is_empty())
            .map(|l| l as u32)
    }

    pub fn entries(&self) -> impl Iterator<Item = &MetaTask> {
        self.levels.iter().flatten()
    }

    pub fn entry_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn level(&self, l: u32) -> &[MetaTask] {
        self.levels
            .get(l as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Merge `other` into `self` on `machine`, spilling overflow into the
    /// local `arena`. Cascades bottom-up until every level holds at most
    /// C entries.
    pub fn merge(
        &mut self,
        other: MetaTaskSet,
        machine: u32,
        arena: &mut Arena,
    ) -> Result<MergeStats, MetaError> {
        if self.chunk_size != other.chunk_size {
            return Err(MetaError::ChunkMismatch {
                a: self.chunk_size,
                b: other.chunk_size,
            });
        }
        self.l0_total += other.l0_total;
        for (l, entries) in other.levels.into_iter().enumerate() {
            if self.levels.len() <= l {
                self.levels.resize(l + 1, Vec::new());
            }
            self.levels[l].extend(entries);
        }

        let mut stats = MergeStats::default();
        let c = self.chunk_size as usize;
        let mut l = 0;
        while l < self.levels.len() {
            if self.levels[l].len() > c {
                let spilled = std::mem::take(&mut self.levels[l]);
                let child_count: u64 = spilled.iter().map(MetaTask::child_count).sum();
                stats.spilled_entries += spilled.len() as u64;
                stats.spill_events += 1;
                let handle = arena.store(spilled);
                if self.levels.len() <= l + 1 {
                    self.levels.resize(l + 2, Vec::new());
                }
                self.levels[l + 1].push(MetaTask {
                    level: (l + 1) as u32,
                    content: MetaContent::Slot {
                        machine,
                        handle,
                        child_count,
                    },
                });
            }
            l += 1;
        }
        debug_assert!(self.levels.iter().all(|lv| lv.len() <= c));
        Ok(stats)
    }

    /// Spill all remaining level-0 entries into a local slot, promoting a
    /// single level-1 reference. Used when freezing subset trees so that a
    /// set at the contention threshold still yields a tree.
    pub fn spill_inline_l0(&mut self, machine: u32, arena: &mut Arena) -> MergeStats {
        let mut stats = MergeStats::default();
        if self.levels.first().is_none_or(Vec::is_empty) {
            return stats;
        }
        let spilled = std::mem::take(&mut self.levels[0]);
        let child_count: u64 = spilled.iter().map(MetaTask::child_count).sum();
        stats.spilled_entries = spilled.len() as u64;
        stats.spill_events = 1;
        let handle = arena.store(spilled);
        if self.levels.len() < 2 {
            self.levels.resize(2, Vec::new());
        }
        self.levels[1].push(MetaTask {
            level: 1,
            content: MetaContent::Slot {
                machine,
                handle,
                child_count,
            },
        });
        stats
    }

    /// Whether the set contains any slot references (a subset tree with
    /// interior nodes, rather than pure inline tasks).
    pub fn has_refs(&self) -> bool {
        self.levels.iter().skip(1).any(|l| !l.is_empty())
    }

    /// Recursively recover every wrapped task, following slot references
    /// through the per-machine arenas. Test/driver-side walk.
    pub fn expand_all<'a>(
        &self,
        arenas: impl Fn(u32) -> &'a Arena + Copy,
    ) -> Result<Vec<TaskContext>, MetaError> {
        let mut out = Vec::new();
        for entry in self.entries() {
            expand_into(entry, arenas, &mut out)?;
        }
        Ok(out)
    }
}

fn expand_into<'a>(
    meta: &MetaTask,
    arenas: impl Fn(u32) -> &'a Arena + Copy,
    out: &mut Vec<TaskContext>,
) -> Result<(), MetaError> {
    match &meta.content {
        MetaContent::Task(t) => out.push(t.clone()),
        MetaContent::Slot { machine, handle, .. } => {
            let slot = arenas(*machine)
                .get(*handle)
                .ok_or(MetaError::DanglingHandle {
                    machine: *machine,
                    handle: *handle,
                })?;
            for child in slot {
                expand_into(child, arenas, out)?;
            }
        }
    }
    Ok(())
}

/// One-level expansion of a slot reference against its owner's arena.
pub fn expand_children<'a>(
    meta: &MetaTask,
    arena: &'a Arena,
) -> Result<&'a [MetaTask], MetaError> {
    match &meta.content {
        MetaContent::Task(_) => Ok(&[]),
        MetaContent::Slot { machine, handle, .. } => {
            arena.get(*handle).ok_or(MetaError::DanglingHandle {
                machine: *machine,
                handle: *handle,
            })
        }
    }
}

// The level-0 descendant total is recomputed at decode rather than sent.
impl Wire for MetaTaskSet {
    fn put(&self, out: &mut Vec<u8>) {
        debug_assert!(self.chunk_size <= u16::MAX as u32);
        (self.chunk_size as u16).put(out);
        debug_assert!(self.levels.len() <= u8::MAX as usize);
        (self.levels.len() as u8).put(out);
        for level in &self.levels {
            debug_assert!(level.len() <= u16::MAX as usize);
            (level.len() as u16).put(out);
            for meta in level {
                meta.put(out);
            }
        }
    }

    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        let chunk_size = u16::take(buf)? as u32;
        if chunk_size == 0 {
            return Err(WireError::BadTag {
                tag: 0,
                what: "meta set chunk size",
            });
        }
        let nlevels = u8::take(buf)? as usize;
        let mut levels = Vec::with_capacity(nlevels);
        let mut l0_total = 0u64;
        for expect_level in 0..nlevels {
            let len = u16::take(buf)? as usize;
            let mut level = Vec::with_capacity(len);
            for _ in 0..len {
                let meta = MetaTask::take(buf)?;
                if meta.level as usize != expect_level {
                    return Err(WireError::BadTag {
                        tag: meta.level as u8,
                        what: "meta task level",
                    });
                }
                l0_total += meta.child_count();
                level.push(meta);
            }
            levels.push(level);
        }
        Ok(Self {
            chunk_size,
            levels,
            l0_total,
        })
    }
}
