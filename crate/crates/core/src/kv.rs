//! Distributed hash-table microbenchmark: Zipf-distributed
//! multiply-and-add tasks over a sharded key space.
//!
//! The update for one task is `value <- value * mul + add` in wrapping
//! two's-complement arithmetic. Affine maps compose associatively but not
//! commutatively, so the combine carries *position fragments*: each
//! fragment covers a consecutive run of a machine's updates to one key,
//! fragments merge by sorted `(origin, position)` order and coalesce when
//! adjacent. By the time an address's contributions are fully folded they
//! coalesce into one fragment per origin machine, so applying them in
//! ascending origin order reproduces the canonical sequential order
//! exactly, no matter how the tree folded the partials.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::orchestrate::{range_owner, ExecResult, OrchSpec, OwnerFn};
use crate::rng::{mix_words, SplitMix64};
use crate::task::TaskContext;
use crate::wire::{Wire, WireError, WireResult};

/// Default key-space size for the microbenchmark.
pub const DEFAULT_KEY_SPACE: u64 = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("zipf exponent must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("key space must be nonzero")]
    EmptyKeySpace,
}

/// Zipf workload description: `tasks_per_machine` draws per machine with
/// rank-r probability proportional to `r^-gamma` over `key_space` keys.
#[derive(Debug, Clone)]
pub struct ZipfSpec {
    pub gamma: f64,
    pub key_space: u64,
    pub tasks_per_machine: u64,
    pub seed: u64,
}

/// Inverse-CDF sampler over ranks 1..=K, via binary search on the
/// precomputed cumulative weights.
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(gamma: f64, key_space: u64) -> Result<Self, KvError> {
        if gamma < 0.0 {
            return Err(KvError::NegativeGamma(gamma));
        }
        if key_space == 0 {
            return Err(KvError::EmptyKeySpace);
        }
        let k = key_space as usize;
        let mut cdf = Vec::with_capacity(k);
        let mut acc = 0.0f64;
        for r in 1..=k {
            acc += (r as f64).powf(-gamma);
            cdf.push(acc);
        }
        Ok(Self { cdf })
    }

    /// Total weight before normalization: the truncated zeta value.
    pub fn total_weight(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    /// Draw a rank in `[1, K]`.
    pub fn sample_rank(&self, rng: &mut SplitMix64) -> u64 {
        let u = rng.next_f64() * self.total_weight();
        match self.cdf.binary_search_by(|w| w.partial_cmp(&u).unwrap()) {
            Ok(i) => i as u64 + 1,
            Err(i) => (i as u64 + 1).min(self.cdf.len() as u64),
        }
    }
}

/// Bijective rank -> key relabeling over the key space, so hot ranks land
/// on unrelated keys and contiguous shard ranges do not concentrate the
/// hot keys on one machine. The distribution over ranks stays exactly
/// Zipf; only the key labels change.
#[derive(Debug, Clone, Copy)]
pub struct KeyRelabel {
    mult: u64,
    offset: u64,
    mask: u64,
    key_space: u64,
}

impl KeyRelabel {
    pub fn new(seed: u64, key_space: u64) -> Self {
        assert!(key_space >= 1);
        let bits = 64 - (key_space - 1).max(1).leading_zeros() as u64;
        let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        Self {
            mult: (mix_words(seed, &[0x6b_6579]) | 1) & mask,
            offset: mix_words(seed, &[0x6f_6666]) & mask,
            mask,
            key_space,
        }
    }

    /// Map rank r (1-based) to a key in `[0, key_space)`.
    pub fn key_of_rank(&self, rank: u64) -> u64 {
        // Odd multiplier modulo a power of two permutes [0, 2^bits); cycle
        // forward past values outside the key space. The walk terminates
        // because the affine map is a bijection of a finite set.
        let mut x = (rank - 1).wrapping_mul(self.mult).wrapping_add(self.offset) & self.mask;
        while x >= self.key_space {
            x = x.wrapping_mul(self.mult).wrapping_add(self.offset) & self.mask;
        }
        x
    }
}

/// Payload of one multiply-and-add task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvTaskPayload {
    pub mul: i64,
    pub add: i64,
    /// Position within this (origin machine, key) update subsequence.
    pub pos: u32,
}

impl Wire for KvTaskPayload {
    fn put(&self, out: &mut Vec<u8>) {
        self.mul.put(out);
        self.add.put(out);
        self.pos.put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(Self {
            mul: i64::take(buf)?,
            add: i64::take(buf)?,
            pos: u32::take(buf)?,
        })
    }
}

/// Generate per-machine task lists with i.i.d. Zipf keys.
pub fn gen_zipf_tasks(spec: &ZipfSpec, p: usize) -> Result<Vec<Vec<TaskContext>>, KvError> {
    let sampler = ZipfSampler::new(spec.gamma, spec.key_space)?;
    let relabel = KeyRelabel::new(spec.seed, spec.key_space);
    let mut out = Vec::with_capacity(p);
    for machine in 0..p {
        let mut rng = SplitMix64::derive(spec.seed, 0x7a69_7066 ^ machine as u64);
        let mut positions: BTreeMap<u64, u32> = BTreeMap::new();
        let mut tasks = Vec::with_capacity(spec.tasks_per_machine as usize);
        for i in 0..spec.tasks_per_machine {
            let rank = sampler.sample_rank(&mut rng);
            let key = relabel.key_of_rank(rank);
            let pos = positions.entry(key).or_insert(0);
            let payload = KvTaskPayload {
                mul: rng.next_range_i64(-3, 3),
                add: rng.next_range_i64(-100, 100),
                pos: *pos,
            };
            *pos += 1;
            tasks.push(
                TaskContext::new(vec![key], payload.to_bytes(), machine as u32, i as u32)
                    .expect("single address"),
            );
        }
        out.push(tasks);
    }
    Ok(out)
}

/// Adversarial workload: every task targets the same key.
pub fn gen_hot_key_tasks(
    key: u64,
    tasks_per_machine: u64,
    p: usize,
    seed: u64,
) -> Vec<Vec<TaskContext>> {
    let mut out = Vec::with_capacity(p);
    for machine in 0..p {
        let mut rng = SplitMix64::derive(seed, 0x68_6f74 ^ machine as u64);
        let tasks = (0..tasks_per_machine)
            .map(|i| {
                let payload = KvTaskPayload {
                    mul: rng.next_range_i64(-3, 3),
                    add: rng.next_range_i64(-100, 100),
                    pos: i as u32,
                };
                TaskContext::new(vec![key], payload.to_bytes(), machine as u32, i as u32)
                    .expect("single address")
            })
            .collect();
        out.push(tasks);
    }
    out
}

/// Payload of a task updating two addresses with one (mul, add) pair;
/// each target key tracks its own position subsequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvTaskPayload2 {
    pub mul: i64,
    pub add: i64,
    pub pos: [u32; 2],
}

impl Wire for KvTaskPayload2 {
    fn put(&self, out: &mut Vec<u8>) {
        self.mul.put(out);
        self.add.put(out);
        self.pos[0].put(out);
        self.pos[1].put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(Self {
            mul: i64::take(buf)?,
            add: i64::take(buf)?,
            pos: [u32::take(buf)?, u32::take(buf)?],
        })
    }
}

/// Like [`gen_zipf_tasks`], but roughly `secondary_fraction` of the
/// tasks carry a second Zipf-drawn address and apply their update to
/// both targets.
pub fn gen_zipf_tasks_secondary(
    spec: &ZipfSpec,
    p: usize,
    secondary_fraction: f64,
) -> Result<Vec<Vec<TaskContext>>, KvError> {
    assert!((0.0..=1.0).contains(&secondary_fraction));
    let sampler = ZipfSampler::new(spec.gamma, spec.key_space)?;
    let relabel = KeyRelabel::new(spec.seed, spec.key_space);
    let mut out = Vec::with_capacity(p);
    for machine in 0..p {
        let mut rng = SplitMix64::derive(spec.seed, 0x7a32_7066 ^ machine as u64);
        let mut positions: BTreeMap<u64, u32> = BTreeMap::new();
        let next_pos = |key: u64, positions: &mut BTreeMap<u64, u32>| {
            let pos = positions.entry(key).or_insert(0);
            let v = *pos;
            *pos += 1;
            v
        };
        let mut tasks = Vec::with_capacity(spec.tasks_per_machine as usize);
        for i in 0..spec.tasks_per_machine {
            let key = relabel.key_of_rank(sampler.sample_rank(&mut rng));
            let two = rng.next_f64() < secondary_fraction;
            let mul = rng.next_range_i64(-3, 3);
            let add = rng.next_range_i64(-100, 100);
            let task = if two {
                let mut key2 = relabel.key_of_rank(sampler.sample_rank(&mut rng));
                if key2 == key {
                    key2 = (key2 + 1) % spec.key_space;
                }
                let payload = KvTaskPayload2 {
                    mul,
                    add,
                    pos: [
                        next_pos(key, &mut positions),
                        next_pos(key2, &mut positions),
                    ],
                };
                TaskContext::new(
                    vec![key, key2],
                    payload.to_bytes(),
                    machine as u32,
                    i as u32,
                )
            } else {
                let payload = KvTaskPayload {
                    mul,
                    add,
                    pos: next_pos(key, &mut positions),
                };
                TaskContext::new(vec![key], payload.to_bytes(), machine as u32, i as u32)
            };
            tasks.push(task.expect("at most two addresses"));
        }
        out.push(tasks);
    }
    Ok(out)
}

/// Contiguous equal-range shard partition: `owner(a) = floor(a * P / K)`.
pub fn kv_shard_partition(key_space: u64, p: usize) -> OwnerFn {
    range_owner(key_space, p)
}

/// Sizes of the shards produced by [`kv_shard_partition`].
pub fn kv_shard_sizes(key_space: u64, p: usize) -> Vec<u64> {
    let owner = kv_shard_partition(key_space, p);
    let mut sizes = vec![0u64; p];
    for a in 0..key_space {
        sizes[owner(a).unwrap()] += 1;
    }
    sizes
}

// ---------------------------------------------------------------------------
// Order-insensitive affine values
// ---------------------------------------------------------------------------

/// One run of consecutive updates `[lo, hi)` from `origin` to a single
/// key, already composed into `value <- value * mul + add`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineFrag {
    pub origin: u32,
    pub lo: u32,
    pub hi: u32,
    pub mul: i64,
    pub add: i64,
}

impl AffineFrag {
    fn then(&self, later: &AffineFrag) -> AffineFrag {
        // self runs first, later second: (x*m1+a1)*m2+a2.
        AffineFrag {
            origin: self.origin,
            lo: self.lo,
            hi: later.hi,
            mul: self.mul.wrapping_mul(later.mul),
            add: self.add.wrapping_mul(later.mul).wrapping_add(later.add),
        }
    }
}

impl Wire for AffineFrag {
    fn put(&self, out: &mut Vec<u8>) {
        self.origin.put(out);
        self.lo.put(out);
        self.hi.put(out);
        self.mul.put(out);
        self.add.put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(Self {
            origin: u32::take(buf)?,
            lo: u32::take(buf)?,
            hi: u32::take(buf)?,
            mul: i64::take(buf)?,
            add: i64::take(buf)?,
        })
    }
}

/// A set of disjoint fragments, sorted by `(origin, lo)`. Merging is
/// commutative and associative, so any fold shape yields the same value;
/// a complete fold coalesces to one fragment per contributing machine.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AffineVal {
    pub frags: Vec<AffineFrag>,
}

impl AffineVal {
    pub fn unit(origin: u32, pos: u32, mul: i64, add: i64) -> Self {
        Self {
            frags: vec![AffineFrag {
                origin,
                lo: pos,
                hi: pos + 1,
                mul,
                add,
            }],
        }
    }

    pub fn merge(a: &AffineVal, b: &AffineVal) -> AffineVal {
        let mut merged: Vec<AffineFrag> = Vec::with_capacity(a.frags.len() + b.frags.len());
        let (mut i, mut j) = (0, 0);
        while i < a.frags.len() || j < b.frags.len() {
            let next = if j >= b.frags.len()
                || (i < a.frags.len()
                    && (a.frags[i].origin, a.frags[i].lo) <= (b.frags[j].origin, b.frags[j].lo))
            {
                let f = a.frags[i];
                i += 1;
                f
            } else {
                let f = b.frags[j];
                j += 1;
                f
            };
            match merged.last_mut() {
                Some(prev) if prev.origin == next.origin && prev.hi == next.lo => {
                    *prev = prev.then(&next);
                }
                _ => merged.push(next),
            }
        }
        AffineVal { frags: merged }
    }

    /// Apply all fragments to `x` in `(origin, lo)` order.
    pub fn apply(&self, mut x: i64) -> i64 {
        for f in &self.frags {
            x = x.wrapping_mul(f.mul).wrapping_add(f.add);
        }
        x
    }
}

impl Wire for AffineVal {
    fn put(&self, out: &mut Vec<u8>) {
        self.frags.put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        let frags = Vec::<AffineFrag>::take(buf)?;
        if frags
            .windows(2)
            .any(|w| (w[0].origin, w[0].lo) > (w[1].origin, w[1].lo))
        {
            return Err(WireError::BadTag {
                tag: 0,
                what: "unsorted affine fragments",
            });
        }
        Ok(Self { frags })
    }
}

/// Orchestration spec for the multiply-and-add workload. The per-task
/// output is the value the task observed (the pre-stage shard entry).
/// Two-address tasks apply their update to both targets.
pub fn kv_spec(chunk_size: u32, fanout: Option<usize>) -> OrchSpec<i64, AffineVal, i64> {
    OrchSpec {
        exec: Arc::new(|task: &TaskContext, data: &[i64]| {
            let values = if task.addrs.len() == 2 {
                let payload = KvTaskPayload2::from_bytes(&task.payload).expect("kv payload");
                vec![
                    AffineVal::unit(task.origin, payload.pos[0], payload.mul, payload.add),
                    AffineVal::unit(task.origin, payload.pos[1], payload.mul, payload.add),
                ]
            } else {
                let payload = KvTaskPayload::from_bytes(&task.payload).expect("kv payload");
                vec![AffineVal::unit(
                    task.origin,
                    payload.pos,
                    payload.mul,
                    payload.add,
                )]
            };
            ExecResult {
                values,
                output: Some(data.first().copied().unwrap_or(0)),
            }
        }),
        get: Arc::new(|shard: &BTreeMap<u64, i64>, addr| shard.get(&addr).copied().unwrap_or(0)),
        write_back: Arc::new(|shard: &mut BTreeMap<u64, i64>, addr, agg: AffineVal| {
            let old = shard.get(&addr).copied().unwrap_or(0);
            shard.insert(addr, agg.apply(old));
        }),
        combine: Arc::new(|a, b| AffineVal::merge(&a, &b)),
        chunk_size,
        fanout,
    }
}

/// Same workload with no per-task output traffic; isolates the
/// task-routing and write-back imbalance.
pub fn kv_spec_no_output(chunk_size: u32, fanout: Option<usize>) -> OrchSpec<i64, AffineVal, ()> {
    let base = kv_spec(chunk_size, fanout);
    OrchSpec {
        exec: Arc::new(move |task: &TaskContext, _data: &[i64]| {
            let payload = KvTaskPayload::from_bytes(&task.payload).expect("kv payload");
            ExecResult {
                values: vec![AffineVal::unit(
                    task.origin,
                    payload.pos,
                    payload.mul,
                    payload.add,
                )],
                output: None,
            }
        }),
        get: base.get,
        write_back: base.write_back,
        combine: base.combine,
        chunk_size,
        fanout,
    }
}

/// Sequential oracle: batch semantics with a canonical update order.
/// Every task observes the pre-stage value; updates then apply machine 0
/// first (in index order), then machine 1, and so on.
/// Final table plus per-task `(local_index, observed value)` lists.
pub type KvOracleResult = (BTreeMap<u64, i64>, Vec<Vec<(u32, i64)>>);

pub fn kv_sequential_oracle(tasks: &[Vec<TaskContext>]) -> KvOracleResult {
    let mut table: BTreeMap<u64, i64> = BTreeMap::new();
    let mut observed: Vec<Vec<(u32, i64)>> = vec![Vec::new(); tasks.len()];
    for (machine, list) in tasks.iter().enumerate() {
        for task in list {
            let addr = task.addrs[0];
            observed[machine].push((task.local_index, table.get(&addr).copied().unwrap_or(0)));
        }
    }
    for list in tasks {
        for task in list {
            let (mul, add) = if task.addrs.len() == 2 {
                let p = KvTaskPayload2::from_bytes(&task.payload).expect("kv payload");
                (p.mul, p.add)
            } else {
                let p = KvTaskPayload::from_bytes(&task.payload).expect("kv payload");
                (p.mul, p.add)
            };
            for &addr in &task.addrs {
                let v = table.get(&addr).copied().unwrap_or(0);
                table.insert(addr, v.wrapping_mul(mul).wrapping_add(add));
            }
        }
    }
    (table, observed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_partition_sizes() {
        assert_eq!(kv_shard_sizes(8, 4), vec![2, 2, 2, 2]);
        let sizes = kv_shard_sizes(10, 4);
        assert_eq!(sizes.iter().sum::<u64>(), 10);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let owner = kv_shard_partition(1 << 20, 16);
        assert_eq!(owner(0), Some(0));
        assert_eq!(owner((1 << 20) - 1), Some(15));
        assert_eq!(owner(1 << 20), None);
    }

    #[test]
    fn large_shard_sizes_equal() {
        let sizes = kv_shard_sizes(1 << 20, 16);
        assert!(sizes.iter().all(|&s| s == 65536));
    }

    #[test]
    fn zipf_gamma_zero_is_uniform_chi_square() {
        // 10^6 draws over 64 keys; the chi-square statistic with 63
        // degrees of freedom stays under the 99th-percentile critical
        // value 92.01.
        let k = 64u64;
        let sampler = ZipfSampler::new(0.0, k).unwrap();
        let mut rng = SplitMix64::new(5);
        let n = 1_000_000u64;
        let mut counts = vec![0u64; k as usize];
        for _ in 0..n {
            counts[(sampler.sample_rank(&mut rng) - 1) as usize] += 1;
        }
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 92.01, "chi2 = {chi2}");
    }

    #[test]
    fn zipf_top_rank_frequency_matches_truncated_zeta() {
        let k = 1u64 << 20;
        let sampler = ZipfSampler::new(2.0, k).unwrap();
        // Oracle: truncated zeta computed numerically.
        let zeta: f64 = (1..=k).map(|r| (r as f64).powi(-2)).sum();
        let expect = 1.0 / zeta;
        let mut rng = SplitMix64::new(9);
        let n = 100_000u64;
        let relabel = KeyRelabel::new(17, k);
        let top_key = relabel.key_of_rank(1);
        let hits = (0..n)
            .filter(|_| relabel.key_of_rank(sampler.sample_rank(&mut rng)) == top_key)
            .count() as f64;
        let top = hits / n as f64;
        assert!(
            (top - expect).abs() <= 0.1 * expect,
            "top-1 frequency {top} vs {expect}"
        );
    }

    #[test]
    fn zero_tasks_per_machine() {
        let spec = ZipfSpec {
            gamma: 1.0,
            key_space: 100,
            tasks_per_machine: 0,
            seed: 3,
        };
        let tasks = gen_zipf_tasks(&spec, 4).unwrap();
        assert!(tasks.iter().all(Vec::is_empty));
    }

    #[test]
    fn negative_gamma_rejected() {
        assert!(matches!(
            ZipfSampler::new(-0.5, 10),
            Err(KvError::NegativeGamma(_))
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ZipfSpec {
            gamma: 1.5,
            key_space: 1 << 10,
            tasks_per_machine: 200,
            seed: 77,
        };
        assert_eq!(
            gen_zipf_tasks(&spec, 3).unwrap(),
            gen_zipf_tasks(&spec, 3).unwrap()
        );
    }

    #[test]
    fn relabel_is_a_bijection() {
        let relabel = KeyRelabel::new(123, 1000);
        let mut seen = std::collections::BTreeSet::new();
        for r in 1..=1000u64 {
            let k = relabel.key_of_rank(r);
            assert!(k < 1000);
            assert!(seen.insert(k), "duplicate key {k}");
        }
    }

    #[test]
    fn affine_unit_apply() {
        assert_eq!(AffineVal::unit(0, 0, 1, 5).apply(10), 15);
        assert_eq!(AffineVal::unit(0, 0, 1, 0).apply(10), 10);
    }

    #[test]
    fn affine_two_step_canonical() {
        // (2,0) then (1,3) on 10: 10*2=20, then 20*1+3=23.
        let a = AffineVal::unit(0, 0, 2, 0);
        let b = AffineVal::unit(0, 1, 1, 3);
        assert_eq!(AffineVal::merge(&a, &b).apply(10), 23);
        assert_eq!(AffineVal::merge(&b, &a).apply(10), 23);
    }

    #[test]
    fn affine_any_fold_shape_equals_sequential() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..200 {
            let n = 1 + rng.next_below(20) as usize;
            let units: Vec<AffineVal> = (0..n)
                .map(|i| {
                    AffineVal::unit(
                        (i % 3) as u32,
                        (i / 3) as u32,
                        rng.next_range_i64(-5, 5),
                        rng.next_range_i64(-50, 50),
                    )
                })
                .collect();
            let x0 = rng.next_range_i64(-1000, 1000);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (units[i].frags[0].origin, units[i].frags[0].lo));
            let mut seq = x0;
            for &i in &order {
                let f = units[i].frags[0];
                seq = seq.wrapping_mul(f.mul).wrapping_add(f.add);
            }
            // Random fold shape must match the canonical sequence.
            let mut pool = units;
            while pool.len() > 1 {
                let i = rng.next_below(pool.len() as u64) as usize;
                let a = pool.remove(i);
                let j = rng.next_below(pool.len() as u64) as usize;
                let b = pool.remove(j);
                pool.push(AffineVal::merge(&a, &b));
            }
            assert_eq!(pool[0].apply(x0), seq);
        }
    }

    #[test]
    fn complete_fold_coalesces_per_origin() {
        let units: Vec<AffineVal> = (0..10)
            .map(|i| AffineVal::unit(i % 2, i / 2, 2, 1))
            .collect();
        let total = units
            .iter()
            .fold(AffineVal::default(), |acc, u| AffineVal::merge(&acc, u));
        assert_eq!(total.frags.len(), 2);
    }
}
