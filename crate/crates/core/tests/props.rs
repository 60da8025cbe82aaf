//! Property tests over the wire formats and the merge algebra.

use proptest::prelude::*;

use tdorch_core::kv::{AffineFrag, AffineVal};
use tdorch_core::meta::{Arena, MetaTaskSet};
use tdorch_core::task::TaskContext;
use tdorch_core::wire::Wire;

fn arb_task() -> impl Strategy<Value = TaskContext> {
    (
        proptest::collection::vec(0u64..1000, 0..=2),
        proptest::collection::vec(any::<u8>(), 0..64),
        0u32..1024,
        any::<u32>(),
    )
        .prop_filter_map("addr cap", |(addrs, payload, origin, idx)| {
            TaskContext::new(addrs, payload, origin, idx).ok()
        })
}

proptest! {
    #[test]
    fn task_context_roundtrips(task in arb_task()) {
        let bytes = task.to_bytes();
        prop_assert_eq!(TaskContext::from_bytes(&bytes).unwrap(), task);
    }

    #[test]
    fn meta_set_roundtrips_and_preserves_count(
        tasks in proptest::collection::vec(arb_task(), 1..200),
        chunk in 2u32..10,
        seed in any::<u64>(),
    ) {
        // Fold in a seed-dependent order; the serialized form must
        // reconstruct an identical set with the same task total.
        let mut rng = tdorch_core::rng::SplitMix64::new(seed);
        let mut arena = Arena::new();
        let mut pool: Vec<MetaTaskSet> = tasks
            .iter()
            .map(|t| MetaTaskSet::wrap_task(t.clone(), chunk))
            .collect();
        while pool.len() > 1 {
            let i = rng.next_below(pool.len() as u64) as usize;
            let mut a = pool.remove(i);
            let j = rng.next_below(pool.len() as u64) as usize;
            let b = pool.remove(j);
            a.merge(b, 0, &mut arena).unwrap();
            pool.push(a);
        }
        let set = pool.pop().unwrap();
        prop_assert_eq!(set.l0_total(), tasks.len() as u64);
        let bytes = set.to_bytes();
        let back = MetaTaskSet::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &set);
        // Serialized size stays linear in the entry count.
        prop_assert!(bytes.len().div_ceil(8) <= 16 * (1 + set.entry_count()));
    }

    #[test]
    fn affine_merge_is_associative_and_commutative(
        parts in proptest::collection::vec((0u32..4, -5i64..=5, -50i64..=50), 1..24),
        x in -1000i64..1000,
    ) {
        // Distinct (origin, pos) units: positions count up per origin.
        let mut next = [0u32; 4];
        let units: Vec<AffineVal> = parts
            .iter()
            .map(|&(o, m, a)| {
                let pos = next[o as usize];
                next[o as usize] += 1;
                AffineVal::unit(o, pos, m, a)
            })
            .collect();
        let fold_left = units
            .iter()
            .skip(1)
            .fold(units[0].clone(), |acc, u| AffineVal::merge(&acc, u));
        let fold_right = units
            .iter()
            .rev()
            .skip(1)
            .fold(units.last().unwrap().clone(), |acc, u| {
                AffineVal::merge(u, &acc)
            });
        prop_assert_eq!(&fold_left, &fold_right);
        prop_assert_eq!(fold_left.apply(x), fold_right.apply(x));
        // Pairwise commutativity on a random split.
        if units.len() >= 2 {
            let (a, b) = units.split_at(units.len() / 2);
            let fa = a.iter().skip(1).fold(a[0].clone(), |acc, u| AffineVal::merge(&acc, u));
            let fb = b.iter().skip(1).fold(b[0].clone(), |acc, u| AffineVal::merge(&acc, u));
            prop_assert_eq!(AffineVal::merge(&fa, &fb), AffineVal::merge(&fb, &fa));
        }
    }

    #[test]
    fn affine_frag_wire_roundtrip(
        origin in any::<u32>(),
        lo in 0u32..1000,
        span in 1u32..10,
        mul in any::<i64>(),
        add in any::<i64>(),
    ) {
        let frag = AffineFrag { origin, lo, hi: lo + span, mul, add };
        prop_assert_eq!(AffineFrag::from_bytes(&frag.to_bytes()).unwrap(), frag);
    }
}
