//! Built-in merge-able write operations.
//!
//! A write ⊕ is merge-able when it factors as x ⊕ y1 ⊕ ... ⊕ yk ==
//! x ⊙ (y1 ⊗ ... ⊗ yk) for an associative combine ⊗ and a final apply ⊙.
//! Each builtin here satisfies that law exactly on two's-complement
//! integers, which is what the law suite checks.
//!
//! The two write-selection ops (`random_select_write`, `min_key_write`)
//! carry the decision key with the value: the data slot stores the key of
//! the last winning write, combine keeps the winning candidate, and apply
//! is the same keyed comparison. With seeded tickets this makes "one
//! random write wins" deterministic per seed and exactly mergeable.

use crate::rng::mix_words;
use crate::wire::{Wire, WireResult};

/// A merge-able operation on data `D` with update values `V`, bundled as
/// plain function pointers so laws can be tested uniformly.
#[derive(Clone, Copy)]
pub struct MergeableOp<D, V> {
    /// ⊕ — apply one update to the data.
    pub oplus: fn(&D, &V) -> D,
    /// ⊗ — combine two updates.
    pub otimes: fn(&V, &V) -> V,
    /// ⊙ — apply a combined update to the data.
    pub odot: fn(&D, &V) -> D,
    pub name: &'static str,
}

impl<D, V> MergeableOp<D, V> {
    /// Left fold of ⊕ over a sequence of updates.
    pub fn fold_oplus(&self, init: &D, values: &[V]) -> D
    where
        D: Clone,
    {
        let mut acc = init.clone();
        for v in values {
            acc = (self.oplus)(&acc, v);
        }
        acc
    }

    /// ⊙ applied once to the ⊗-fold of the updates.
    pub fn apply_combined(&self, init: &D, values: &[V]) -> D
    where
        D: Clone,
        V: Clone,
    {
        match values.split_first() {
            None => init.clone(),
            Some((first, rest)) => {
                let mut agg = first.clone();
                for v in rest {
                    agg = (self.otimes)(&agg, v);
                }
                (self.odot)(init, &agg)
            }
        }
    }
}

/// Wrapping integer addition (set-associative family: ⊙ and ⊗ are both ⊕).
pub fn add_op() -> MergeableOp<i64, i64> {
    MergeableOp {
        oplus: |x, y| x.wrapping_add(*y),
        otimes: |a, b| a.wrapping_add(*b),
        odot: |x, y| x.wrapping_add(*y),
        name: "ADD",
    }
}

/// Idempotent max (⊙ = ⊗ = ⊕ = max).
pub fn max_op() -> MergeableOp<i64, i64> {
    MergeableOp {
        oplus: |x, y| (*x).max(*y),
        otimes: |a, b| (*a).max(*b),
        odot: |x, y| (*x).max(*y),
        name: "MAX",
    }
}

/// Idempotent min.
pub fn min_op() -> MergeableOp<i64, i64> {
    MergeableOp {
        oplus: |x, y| (*x).min(*y),
        otimes: |a, b| (*a).min(*b),
        odot: |x, y| (*x).min(*y),
        name: "MIN",
    }
}

/// A write candidate (or stored write) tagged with its decision key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Keyed {
    pub key: u64,
    pub val: i64,
}

impl Wire for Keyed {
    fn put(&self, out: &mut Vec<u8>) {
        self.key.put(out);
        self.val.put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(Self {
            key: u64::take(buf)?,
            val: i64::take(buf)?,
        })
    }
}

/// Ticket for a random-select write: a seeded hash of the task identity.
pub fn select_ticket(seed: u64, origin: u32, local_index: u32) -> u64 {
    mix_words(seed, &[origin as u64, local_index as u64]).max(1)
}

/// Concurrent writes where one (seeded-)random write wins: the candidate
/// with the largest ticket persists. Lexicographic on (key, val) for a
/// total order.
pub fn random_select_write() -> MergeableOp<Keyed, Keyed> {
    MergeableOp {
        oplus: |x, y| (*x).max(*y),
        otimes: |a, b| (*a).max(*b),
        odot: |x, y| (*x).max(*y),
        name: "RANDOM_SELECT_WRITE",
    }
}

/// Deterministic decision process: the write with the smallest key
/// (timestamp / transaction id) wins regardless of arrival order.
pub fn min_key_write() -> MergeableOp<Keyed, Keyed> {
    MergeableOp {
        oplus: |x, y| (*x).min(*y),
        otimes: |a, b| (*a).min(*b),
        odot: |x, y| (*x).min(*y),
        name: "MIN_KEY_WRITE",
    }
}
