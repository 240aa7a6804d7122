//! Brute-force ground truth for sliding-window queries.
//!
//! [`ExactWindowStore`] keeps every event and answers frequencies, L1 norms,
//! inner products, heavy-hitter sets and range counts by linear scan. It
//! exists for verification, not speed, and shares its window-edge predicate
//! with the synopses so the two sides can never disagree on boundaries.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::windows::{after_floor, Timestamp, WindowMode};

/// One recorded arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub at: Timestamp,
    pub key: u64,
    pub value: u64,
}

/// Timestamped multiset of events with exact window-suffix answers.
#[derive(Debug, Clone)]
pub struct ExactWindowStore {
    window: u64,
    mode: WindowMode,
    events: Vec<Event>,
}

impl ExactWindowStore {
    pub fn new(window: u64, mode: WindowMode) -> Self {
        ExactWindowStore {
            window,
            mode,
            events: Vec::new(),
        }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn mode(&self) -> WindowMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, at: Timestamp, key: u64, value: u64) {
        self.events.push(Event { at, key, value });
    }

    fn check_range(&self, range: u64) -> Result<()> {
        if range == 0 || range > self.window {
            return Err(Error::RangeOutsideWindow {
                range,
                window: self.window,
            });
        }
        Ok(())
    }

    fn in_range<'a>(
        &'a self,
        range: u64,
        now: Timestamp,
    ) -> impl Iterator<Item = &'a Event> + 'a {
        let floor = now.checked_sub(range);
        self.events.iter().filter(move |e| after_floor(e.at, floor))
    }

    /// Exact frequency of `key` within the last `range` units at `now`.
    pub fn frequency(&self, key: u64, range: u64, now: Timestamp) -> Result<u64> {
        self.check_range(range)?;
        Ok(self
            .in_range(range, now)
            .filter(|e| e.key == key)
            .map(|e| e.value)
            .sum())
    }

    /// Exact number of arrivals within the range (the L1 norm of the
    /// windowed frequency vector).
    pub fn l1(&self, range: u64, now: Timestamp) -> Result<u64> {
        self.check_range(range)?;
        Ok(self.in_range(range, now).map(|e| e.value).sum())
    }

    /// Exact per-key frequency table within the range.
    pub fn frequencies(&self, range: u64, now: Timestamp) -> Result<BTreeMap<u64, u64>> {
        self.check_range(range)?;
        let mut table = BTreeMap::new();
        for e in self.in_range(range, now) {
            *table.entry(e.key).or_insert(0) += e.value;
        }
        Ok(table)
    }

    /// Exact inner product of two stores' windowed frequency vectors.
    pub fn inner_product(&self, other: &ExactWindowStore, range: u64, now: Timestamp) -> Result<u64> {
        let a = self.frequencies(range, now)?;
        let b = other.frequencies(range, now)?;
        Ok(a.iter()
            .filter_map(|(key, &fa)| b.get(key).map(|&fb| fa * fb))
            .sum())
    }

    /// Exact second frequency moment of the windowed stream.
    pub fn self_join(&self, range: u64, now: Timestamp) -> Result<u64> {
        self.inner_product(self, range, now)
    }

    /// Exact set of keys with in-range frequency at least `threshold`
    /// arrivals, with their frequencies, ascending by key.
    pub fn heavy_hitters(
        &self,
        threshold: f64,
        range: u64,
        now: Timestamp,
    ) -> Result<Vec<(u64, u64)>> {
        Ok(self
            .frequencies(range, now)?
            .into_iter()
            .filter(|&(_, f)| f as f64 >= threshold)
            .collect())
    }

    /// Exact count of in-range arrivals whose key lies in `[lo, hi]`.
    pub fn range_count(&self, lo: u64, hi: u64, range: u64, now: Timestamp) -> Result<u64> {
        self.check_range(range)?;
        Ok(self
            .in_range(range, now)
            .filter(|e| (lo..=hi).contains(&e.key))
            .map(|e| e.value)
            .sum())
    }

    /// Distinct keys within the range, ascending.
    pub fn distinct_keys(&self, range: u64, now: Timestamp) -> Result<Vec<u64>> {
        Ok(self.frequencies(range, now)?.into_keys().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_answers_zero() {
        let s = ExactWindowStore::new(10, WindowMode::TimeBased);
        assert_eq!(s.frequency(1, 10, 100).unwrap(), 0);
        assert_eq!(s.l1(10, 100).unwrap(), 0);
        assert_eq!(s.self_join(10, 100).unwrap(), 0);
        assert!(s.heavy_hitters(1.0, 10, 100).unwrap().is_empty());
    }

    #[test]
    fn hand_counted_example() {
        let mut s = ExactWindowStore::new(10, WindowMode::TimeBased);
        s.push(1, 100, 1);
        s.push(2, 100, 1);
        s.push(3, 200, 1);
        // Range (1, 3]: one 'a'-event at 2, one 'b'-event at 3.
        assert_eq!(s.frequency(100, 2, 3).unwrap(), 1);
        assert_eq!(s.frequency(200, 2, 3).unwrap(), 1);
        assert_eq!(s.l1(2, 3).unwrap(), 2);
    }

    #[test]
    fn self_join_is_sum_of_squared_frequencies() {
        let mut s = ExactWindowStore::new(100, WindowMode::TimeBased);
        for (i, key) in [5u64, 5, 5, 9, 9, 3].into_iter().enumerate() {
            s.push(i as u64 + 1, key, 1);
        }
        let by_def: u64 = s
            .frequencies(100, 6)
            .unwrap()
            .values()
            .map(|f| f * f)
            .sum();
        assert_eq!(s.self_join(100, 6).unwrap(), by_def);
        assert_eq!(by_def, 9 + 4 + 1);
    }

    #[test]
    fn rejects_ranges_beyond_window() {
        let s = ExactWindowStore::new(10, WindowMode::TimeBased);
        assert!(s.l1(11, 100).is_err());
        assert!(s.l1(0, 100).is_err());
    }

    #[test]
    fn permuting_equal_timestamps_changes_nothing() {
        let mut a = ExactWindowStore::new(100, WindowMode::TimeBased);
        let mut b = ExactWindowStore::new(100, WindowMode::TimeBased);
        a.push(5, 1, 1);
        a.push(5, 2, 3);
        b.push(5, 2, 3);
        b.push(5, 1, 1);
        for range in [1, 50, 100] {
            assert_eq!(a.l1(range, 6).unwrap(), b.l1(range, 6).unwrap());
            assert_eq!(
                a.frequencies(range, 6).unwrap(),
                b.frequencies(range, 6).unwrap()
            );
        }
    }
}
