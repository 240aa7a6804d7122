//! Property tests: the structural invariants and error guarantees hold on
//! arbitrary monotone streams, not just the hand-picked ones.

use ecm_sketch::hash::mix64;
use ecm_sketch::heavy::dyadic_cover;
use ecm_sketch::oracle::ExactWindowStore;
use ecm_sketch::windows::{
    DeterministicWave, ExponentialHistogram, RandomizedWave, Synopsis, WindowConfig, WindowMode,
};
use proptest::prelude::*;

/// A monotone stream: cumulative gaps and per-arrival bit counts.
fn stream_strategy(max_len: usize) -> impl Strategy<Value = Vec<(u64, u64)>> {
    prop::collection::vec((0u64..4, 1u64..4), 1..max_len).prop_map(|raw| {
        let mut at = 0;
        raw.into_iter()
            .map(|(gap, bits)| {
                at += gap;
                (at, bits)
            })
            .collect()
    })
}

fn epsilon_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(0.3), Just(0.15), Just(0.08)]
}

fn exact_suffix(events: &[(u64, u64)], range: u64, now: u64) -> u64 {
    let floor = now.checked_sub(range);
    events
        .iter()
        .filter(|&&(ts, _)| floor.map_or(true, |f| ts > f))
        .map(|&(_, bits)| bits)
        .sum()
}

proptest! {
    /// The histogram size invariant survives arbitrary inserts and expiry,
    /// and every suffix query lands within epsilon of the exact count.
    #[test]
    fn eh_invariant_and_error_bound(
        events in stream_strategy(250),
        epsilon in epsilon_strategy(),
        window in prop_oneof![Just(32u64), Just(200u64), Just(5000u64)],
        extra_age in 0u64..20,
    ) {
        let mut h = ExponentialHistogram::new(WindowConfig::time(window, epsilon).unwrap());
        for &(at, bits) in &events {
            h.insert(bits, at).unwrap();
            prop_assert!(h.satisfies_size_invariant());
        }
        let now = events.last().unwrap().0 + extra_age;
        let max_range = window.min(now + 2).max(1);
        let step = (max_range / 40).max(1);
        for range in (1..=max_range).step_by(step as usize) {
            let est = h.query(range, now).unwrap();
            let truth = exact_suffix(&events, range, now);
            prop_assert!(
                (est as f64 - truth as f64).abs() <= epsilon * truth as f64 + 1e-9,
                "range {range} now {now}: est {est} truth {truth} eps {epsilon}"
            );
        }
    }

    /// Deterministic waves answer with the same guarantee.
    #[test]
    fn wave_error_bound(
        events in stream_strategy(250),
        epsilon in epsilon_strategy(),
        extra_age in 0u64..20,
    ) {
        let total: u64 = events.iter().map(|&(_, b)| b).sum();
        let window = 5000u64;
        let cfg = WindowConfig::with_capacity(window, WindowMode::TimeBased, epsilon, total.max(1))
            .unwrap();
        let mut w = DeterministicWave::new(cfg);
        for &(at, bits) in &events {
            w.insert(bits, at).unwrap();
        }
        let now = events.last().unwrap().0 + extra_age;
        let max_range = window.min(now + 2).max(1);
        let step = (max_range / 40).max(1);
        for range in (1..=max_range).step_by(step as usize) {
            let est = w.query(range, now).unwrap();
            let truth = exact_suffix(&events, range, now);
            prop_assert!(
                (est as f64 - truth as f64).abs() <= epsilon * truth as f64 + 1e-9,
                "range {range} now {now}: est {est} truth {truth} eps {epsilon}"
            );
        }
    }

    /// Serialization round-trips are bit-exact for every backend.
    #[test]
    fn frames_roundtrip_bit_exact(
        events in stream_strategy(150),
        epsilon in epsilon_strategy(),
        seed in 0u64..1000,
    ) {
        let total: u64 = events.iter().map(|&(_, b)| b).sum();
        let cfg = WindowConfig::with_capacity(10_000, WindowMode::TimeBased, epsilon, total.max(1))
            .unwrap();
        let mut eh = ExponentialHistogram::new(cfg);
        let mut dw = DeterministicWave::new(cfg);
        let mut rw = RandomizedWave::new(cfg, 0.1, seed).unwrap();
        for (i, &(at, bits)) in events.iter().enumerate() {
            eh.insert(bits, at).unwrap();
            dw.insert(bits, at).unwrap();
            for unit in 0..bits {
                rw.insert_event(mix64(i as u64, unit), at).unwrap();
            }
        }
        for synopsis in [Synopsis::Eh(eh), Synopsis::Dw(dw), Synopsis::Rw(rw)] {
            let bytes = synopsis.to_bytes();
            let back = Synopsis::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &synopsis);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    /// The canonical dyadic cover of any interval is exact, disjoint and
    /// uses at most 2 log|U| blocks.
    #[test]
    fn dyadic_cover_partitions_exactly(
        bits in 1u32..10,
        raw_lo in 0u64..1024,
        raw_hi in 0u64..1024,
    ) {
        let universe = 1u64 << bits;
        let lo = raw_lo % universe;
        let hi = lo + (raw_hi % (universe - lo));
        let cover = dyadic_cover(lo, hi, bits);
        prop_assert!(cover.len() <= 2 * bits as usize);
        let mut covered = Vec::new();
        for (level, prefix) in cover {
            let start = prefix << level;
            covered.extend(start..start + (1u64 << level));
        }
        covered.sort_unstable();
        let expected: Vec<u64> = (lo..=hi).collect();
        prop_assert_eq!(covered, expected);
    }

    /// Oracle answers ignore the relative order of same-timestamp events.
    #[test]
    fn oracle_is_permutation_invariant_at_equal_timestamps(
        events in prop::collection::vec((0u64..6, 0u64..8, 1u64..3), 1..60),
        swaps in prop::collection::vec((0usize..60, 0usize..60), 0..20),
    ) {
        let mut ordered: Vec<(u64, u64, u64)> = Vec::new();
        let mut at = 0;
        for (gap, key, value) in events {
            at += gap;
            ordered.push((at, key, value));
        }
        let mut shuffled = ordered.clone();
        for (a, b) in swaps {
            let (a, b) = (a % shuffled.len(), b % shuffled.len());
            if shuffled[a].0 == shuffled[b].0 {
                shuffled.swap(a, b);
            }
        }
        let build = |evs: &[(u64, u64, u64)]| {
            let mut s = ExactWindowStore::new(100, WindowMode::TimeBased);
            for &(ts, key, value) in evs {
                s.push(ts, key, value);
            }
            s
        };
        let a = build(&ordered);
        let b = build(&shuffled);
        let now = ordered.last().unwrap().0 + 1;
        for range in [1u64, 3, 10, 100] {
            prop_assert_eq!(a.l1(range, now).unwrap(), b.l1(range, now).unwrap());
            prop_assert_eq!(
                a.frequencies(range, now).unwrap(),
                b.frequencies(range, now).unwrap()
            );
            prop_assert_eq!(
                a.self_join(range, now).unwrap(),
                b.self_join(range, now).unwrap()
            );
        }
    }
}
