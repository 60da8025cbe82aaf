//! Task contexts: one unit of work, carrying the addresses it needs and
//! an opaque payload.

use crate::wire::{take_bytes, Wire, WireError, WireResult};
use thiserror::Error;

/// Maximum number of data addresses one task may reference.
pub const MAX_TASK_ADDRS: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("task references {got} addresses, limit is {limit}")]
    TooManyAddrs { got: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskContext {
    /// Target data addresses, deduplicated, at most [`MAX_TASK_ADDRS`].
    pub addrs: Vec<u64>,
    pub payload: Vec<u8>,
    /// Machine the task started on; outputs are returned there.
    pub origin: u32,
    /// Position within the origin machine's batch.
    pub local_index: u32,
}

impl TaskContext {
    pub fn new(
        addrs: Vec<u64>,
        payload: Vec<u8>,
        origin: u32,
        local_index: u32,
    ) -> Result<Self, TaskError> {
        let mut addrs = addrs;
        addrs.dedup();
        // Dedup non-adjacent duplicates too; order of first occurrence wins.
        let mut seen = Vec::with_capacity(addrs.len());
        for a in addrs {
            if !seen.contains(&a) {
                seen.push(a);
            }
        }
        if seen.len() > MAX_TASK_ADDRS {
            return Err(TaskError::TooManyAddrs {
                got: seen.len(),
                limit: MAX_TASK_ADDRS,
            });
        }
        Ok(Self {
            addrs: seen,
            payload,
            origin,
            local_index,
        })
    }

    /// Address that decides where the task travels; tasks without
    /// addresses stay on their origin machine.
    pub fn primary_addr(&self) -> Option<u64> {
        self.addrs.first().copied()
    }
}

// Wire layout is kept tight: task movement dominates substage-1 traffic,
// so origin rides as u16 (machine ids fit) and payload length as u16.
impl Wire for TaskContext {
    fn put(&self, out: &mut Vec<u8>) {
        (self.addrs.len() as u8).put(out);
        for a in &self.addrs {
            a.put(out);
        }
        debug_assert!(self.payload.len() <= u16::MAX as usize);
        (self.payload.len() as u16).put(out);
        out.extend_from_slice(&self.payload);
        debug_assert!(self.origin <= u16::MAX as u32);
        (self.origin as u16).put(out);
        self.local_index.put(out);
    }

    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        let n = u8::take(buf)? as usize;
        if n > MAX_TASK_ADDRS {
            return Err(WireError::BadLength {
                len: n,
                limit: MAX_TASK_ADDRS,
            });
        }
        let mut addrs = Vec::with_capacity(n);
        for _ in 0..n {
            addrs.push(u64::take(buf)?);
        }
        let plen = u16::take(buf)? as usize;
        let payload = take_bytes(buf, plen)?.to_vec();
        Ok(Self {
            addrs,
            payload,
            origin: u16::take(buf)? as u32,
            local_index: u32::take(buf)?,
        })
    }
}
