//! Deterministic wave: sliding-window counting with O(1) worst-case updates.
//!
//! Unit events are ranked 1, 2, 3, ... in arrival order. Logical level `i`
//! tracks the timestamps of the last `cap` events whose rank is a multiple
//! of `2^i`; a query walks up from level 0 until it finds a level whose
//! retained span reaches the query boundary, then brackets the boundary rank
//! between two retained multiples. Each event is physically stored exactly
//! once, in the queue of its rank's trailing-zero class, so an update
//! touches one queue regardless of depth.
//!
//! The level count is fixed at construction from the per-window arrival
//! bound; exceeding that bound is an error rather than a silent loss of
//! accuracy.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

use super::{bits_for, merge_schedule, LogBucket, Timestamp, WindowConfig, WindowMode};

/// Retained multiples per logical level: `ceil(1/e) + 1`, so that when level
/// `i-1` cannot reach the query boundary at least `cap - 1` of its multiples
/// lie inside the range and the level-`i` bracketing error `2^(i-1)` stays
/// below `e` times the true count.
fn level_capacity(epsilon: f64) -> usize {
    (1.0 / epsilon).ceil() as usize + 1
}

/// Levels needed so the top level spans `capacity` ranks.
fn level_count(capacity: u64, cap: usize) -> u32 {
    let reach = (cap - 1) as u64;
    let mut levels = 1u32;
    while levels < 63 && reach << (levels - 1) < capacity {
        levels += 1;
    }
    levels
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicWave {
    config: WindowConfig,
    cap: usize,
    levels: u32,
    /// `queues[j]` holds `(rank, timestamp)` of events whose rank has
    /// exactly `j` trailing zeros (at least `j` for the top class), oldest
    /// first. Both components are ascending.
    queues: Vec<VecDeque<(u64, Timestamp)>>,
    /// Total unit events ever inserted; ranks run 1..=count.
    count: u64,
    last: Option<Timestamp>,
    /// Arrival accounting for the window-aligned block that `last` falls in;
    /// more than `capacity` arrivals inside one aligned block is a definite
    /// capacity violation.
    block: u64,
    block_count: u64,
}

impl DeterministicWave {
    pub fn new(config: WindowConfig) -> Self {
        let cap = level_capacity(config.epsilon);
        let levels = level_count(config.capacity, cap);
        DeterministicWave {
            config,
            cap,
            levels,
            queues: vec![VecDeque::new(); levels as usize],
            count: 0,
            last: None,
            block: 0,
            block_count: 0,
        }
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn total_inserted(&self) -> u64 {
        self.count
    }

    pub fn last_arrival(&self) -> Option<Timestamp> {
        self.last
    }

    pub fn level_count(&self) -> u32 {
        self.levels
    }

    /// Registers `bits` unit events at `at`.
    pub fn insert(&mut self, bits: u64, at: Timestamp) -> Result<()> {
        if bits == 0 {
            return Err(Error::ZeroCount);
        }
        if let Some(last) = self.last {
            if at < last {
                return Err(Error::NonMonotonicTimestamp { at, last });
            }
        }
        let block = at / self.config.window;
        let in_block = if block == self.block { self.block_count } else { 0 };
        if in_block + bits > self.config.capacity {
            return Err(Error::CapacityExceeded {
                capacity: self.config.capacity,
            });
        }
        self.block = block;
        self.block_count = in_block + bits;
        self.insert_units_unchecked(bits, at);
        Ok(())
    }

    /// Insertion path used by the merge replay, which may legitimately pile
    /// reconstructed (partly expired) events into old blocks.
    fn insert_units_unchecked(&mut self, bits: u64, at: Timestamp) {
        self.last = Some(at);
        for _ in 0..bits {
            self.count += 1;
            let class = (self.count.trailing_zeros()).min(self.levels - 1) as usize;
            let queue = &mut self.queues[class];
            queue.push_back((self.count, at));
            if queue.len() > self.cap {
                queue.pop_front();
            }
        }
    }

    /// Timestamp of the event with exactly this rank, if retained.
    fn timestamp_at(&self, rank: u64) -> Option<Timestamp> {
        let class = (rank.trailing_zeros()).min(self.levels - 1) as usize;
        let queue = &self.queues[class];
        let idx = binary_search(queue, |&(r, _)| r < rank);
        match queue.get(idx) {
            Some(&(r, ts)) if r == rank => Some(ts),
            _ => None,
        }
    }

    /// Newest retained rank with timestamp at or before `floor`, looking at
    /// ranks that are multiples of `2^level`.
    fn newest_rank_at_or_before(&self, floor: Timestamp, level: u32) -> u64 {
        let mut best = 0u64;
        for class in level as usize..self.levels as usize {
            let queue = &self.queues[class];
            let idx = binary_search(queue, |&(_, ts)| ts <= floor);
            if idx > 0 {
                let (rank, _) = queue[idx - 1];
                best = best.max(rank);
            }
        }
        best
    }

    /// Estimated number of events in the last `range` units at `now`.
    ///
    /// Walks levels from finest to coarsest; the first level whose retained
    /// span reaches the boundary brackets the boundary rank within `2^i - 1`
    /// and the midpoint estimate errs by at most `2^(i-1)`, which the level
    /// selection keeps below `epsilon` times the true count. Running out of
    /// levels means the per-window arrival bound was exceeded.
    pub fn query(&self, range: u64, now: Timestamp) -> Result<u64> {
        let floor = self.config.range_floor(range, now)?;
        if self.count == 0 {
            return Ok(0);
        }
        for level in 0..self.levels {
            let step = 1u64 << level;
            let newest_multiple = (self.count >> level) << level;
            let zone_floor = newest_multiple.saturating_sub((self.cap as u64 - 1) * step);
            let covered = if zone_floor == 0 {
                true
            } else {
                match (self.timestamp_at(zone_floor), floor) {
                    (Some(ts), Some(f)) => ts <= f,
                    _ => false,
                }
            };
            if !covered {
                continue;
            }
            let boundary = match floor {
                Some(f) => self.newest_rank_at_or_before(f, level),
                None => 0,
            };
            let upper = (boundary + step - 1).min(self.count);
            let slack = upper - boundary;
            return Ok(self.count - boundary - slack / 2);
        }
        Err(Error::CapacityExceeded {
            capacity: self.config.capacity,
        })
    }

    /// Reconstructed event log, oldest to newest, used by the merge: the
    /// gap between consecutive retained ranks becomes a bucket spanning
    /// their timestamps.
    pub(crate) fn sample_log(&self) -> Vec<LogBucket> {
        let mut entries: Vec<(u64, Timestamp)> = self
            .queues
            .iter()
            .flat_map(|q| q.iter().copied())
            .collect();
        entries.sort_unstable();
        let mut out = Vec::with_capacity(entries.len());
        let mut prev: Option<(u64, Timestamp)> = None;
        for (rank, ts) in entries {
            let (prev_rank, prev_ts) = prev.unwrap_or((0, ts));
            out.push(LogBucket {
                start: prev_ts,
                end: ts,
                bits: rank - prev_rank,
            });
            prev = Some((rank, ts));
        }
        out
    }

    /// Order-preserving aggregation of time-based waves over the same window
    /// length, rebuilt at error `eps_prime`; the same combined error bound
    /// as the histogram merge applies.
    pub fn merge(inputs: &[&DeterministicWave], eps_prime: f64) -> Result<DeterministicWave> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Incompatible("no inputs to merge".into()))?;
        let window = first.config.window;
        let mut capacity = 0u64;
        for input in inputs {
            if input.config.mode != WindowMode::TimeBased {
                return Err(Error::UnsupportedMerge(
                    "count-based windows lose the order of non-events and cannot be \
                     merged order-preservingly",
                ));
            }
            if input.config.window != window {
                return Err(Error::Incompatible(format!(
                    "window lengths differ: {} vs {}",
                    input.config.window, window
                )));
            }
            capacity = capacity.saturating_add(input.config.capacity);
        }
        let config =
            WindowConfig::with_capacity(window, WindowMode::TimeBased, eps_prime, capacity.max(1))?;
        let logs: Vec<_> = inputs.iter().map(|i| i.sample_log()).collect();
        let mut merged = DeterministicWave::new(config);
        for (ts, bits) in merge_schedule(&logs) {
            merged.insert_units_unchecked(bits, ts);
        }
        Ok(merged)
    }

    /// Paper-model space: a rank and a log-encoded timestamp per entry.
    pub fn model_bits(&self) -> u64 {
        let entry_bits =
            u64::from(bits_for(self.config.capacity)) + u64::from(bits_for(self.config.window));
        let entries: u64 = self.queues.iter().map(|q| q.len() as u64).sum();
        super::ExponentialHistogram::HEADER_MODEL_BITS + entries * entry_bits
    }

    pub fn heap_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.queues.capacity() * std::mem::size_of::<VecDeque<(u64, Timestamp)>>()
            + self
                .queues
                .iter()
                .map(|q| q.capacity() * std::mem::size_of::<(u64, Timestamp)>())
                .sum::<usize>()
    }

    pub(crate) fn encode_body(&self, w: &mut Writer) {
        self.config.encode(w);
        w.u64(self.count);
        match self.last {
            Some(t) => {
                w.u8(1);
                w.u64(t);
            }
            None => w.u8(0),
        }
        w.u64(self.block);
        w.u64(self.block_count);
        w.u32(self.queues.len() as u32);
        for queue in &self.queues {
            w.u32(queue.len() as u32);
            for &(rank, ts) in queue {
                w.u64(rank);
                w.u64(ts);
            }
        }
    }

    pub(crate) fn decode_body(r: &mut Reader) -> Result<Self> {
        let config = WindowConfig::decode(r)?;
        let count = r.u64()?;
        let last = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            other => return Err(Error::Format(format!("bad last-arrival tag {other}"))),
        };
        let block = r.u64()?;
        let block_count = r.u64()?;
        let queue_count = r.u32()?;
        let cap = level_capacity(config.epsilon);
        let levels = level_count(config.capacity, cap);
        if queue_count != levels {
            return Err(Error::Format(format!(
                "frame has {queue_count} queues, configuration implies {levels}"
            )));
        }
        let mut queues = Vec::with_capacity(levels as usize);
        for _ in 0..levels {
            let len = r.u32()? as usize;
            if len > cap {
                return Err(Error::Format(format!("queue over capacity {cap}")));
            }
            let mut queue = VecDeque::with_capacity(len);
            let mut prev: Option<(u64, Timestamp)> = None;
            for _ in 0..len {
                let entry = (r.u64()?, r.u64()?);
                if prev.is_some_and(|p| entry < p) {
                    return Err(Error::Format("wave entries out of order".into()));
                }
                prev = Some(entry);
                queue.push_back(entry);
            }
            queues.push(queue);
        }
        Ok(DeterministicWave {
            config,
            cap,
            levels,
            queues,
            count,
            last,
            block,
            block_count,
        })
    }
}

/// First index at which `keep_left` turns false; the deque is partitioned.
fn binary_search<T>(queue: &VecDeque<T>, keep_left: impl Fn(&T) -> bool) -> usize {
    let mut lo = 0;
    let mut hi = queue.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if keep_left(&queue[mid]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windows::{after_floor, Synopsis};

    fn time_wave(window: u64, eps: f64) -> DeterministicWave {
        DeterministicWave::new(WindowConfig::time(window, eps).unwrap())
    }

    fn exact(stream: &[Timestamp], range: u64, now: Timestamp) -> u64 {
        let floor = now.checked_sub(range);
        stream.iter().filter(|&&t| after_floor(t, floor)).count() as u64
    }

    #[test]
    fn empty_wave_estimates_zero() {
        let w = time_wave(100, 0.5);
        assert_eq!(w.query(100, 50).unwrap(), 0);
    }

    #[test]
    fn hundred_uniform_bits_within_epsilon() {
        let mut w = time_wave(1000, 0.1);
        let stream: Vec<u64> = (1..=100).map(|i| i * 10).collect();
        for &t in &stream {
            w.insert(1, t).unwrap();
        }
        for range in 1..=1000 {
            let est = w.query(range, 1000).unwrap();
            let truth = exact(&stream, range, 1000);
            assert!(
                (est as f64 - truth as f64).abs() <= 0.1 * truth as f64 + 1e-9,
                "range {range}: est {est} truth {truth}"
            );
        }
    }

    #[test]
    fn dense_stream_with_eviction_stays_within_epsilon() {
        let mut w = DeterministicWave::new(
            WindowConfig::with_capacity(10_000, WindowMode::TimeBased, 0.2, 5000).unwrap(),
        );
        let stream: Vec<u64> = (1..=3000).collect();
        for &t in &stream {
            w.insert(1, t).unwrap();
        }
        for range in (1..=3000).step_by(7) {
            let est = w.query(range, 3000).unwrap();
            let truth = exact(&stream, range, 3000);
            assert!(
                (est as f64 - truth as f64).abs() <= 0.2 * truth as f64 + 1e-9,
                "range {range}: est {est} truth {truth}"
            );
        }
    }

    #[test]
    fn capacity_overflow_is_an_error() {
        let mut w = DeterministicWave::new(
            WindowConfig::with_capacity(100, WindowMode::TimeBased, 0.5, 4).unwrap(),
        );
        for _ in 0..4 {
            w.insert(1, 10).unwrap();
        }
        assert_eq!(w.insert(1, 10), Err(Error::CapacityExceeded { capacity: 4 }));
        // Bulk insert is rejected atomically.
        let mut w2 = DeterministicWave::new(
            WindowConfig::with_capacity(100, WindowMode::TimeBased, 0.5, 4).unwrap(),
        );
        assert_eq!(w2.insert(5, 10), Err(Error::CapacityExceeded { capacity: 4 }));
        assert_eq!(w2.total_inserted(), 0);
    }

    #[test]
    fn rejects_backwards_timestamps() {
        let mut w = time_wave(100, 0.5);
        w.insert(1, 5).unwrap();
        assert!(matches!(
            w.insert(1, 4),
            Err(Error::NonMonotonicTimestamp { .. })
        ));
    }

    #[test]
    fn merge_with_empty_is_within_combined_bound() {
        let eps = 0.2;
        let mut x = time_wave(1000, eps);
        let stream: Vec<u64> = (1..=200).map(|i| i * 3).collect();
        for &t in &stream {
            x.insert(1, t).unwrap();
        }
        let empty = time_wave(1000, eps);
        let merged = DeterministicWave::merge(&[&x, &empty], eps).unwrap();
        let bound = eps + eps + eps * eps;
        for range in (10..=1000).step_by(37) {
            let est = merged.query(range, 600).unwrap();
            let truth = exact(&stream, range, 600);
            assert!(
                (est as f64 - truth as f64).abs() <= bound * truth as f64 + 1e-9,
                "range {range}: est {est} truth {truth}"
            );
        }
    }

    #[test]
    fn merge_rejects_count_based_inputs() {
        let w = DeterministicWave::new(WindowConfig::count(10, 0.5).unwrap());
        assert!(matches!(
            DeterministicWave::merge(&[&w], 0.5),
            Err(Error::UnsupportedMerge(_))
        ));
    }

    #[test]
    fn synopsis_roundtrip_is_bit_exact() {
        let mut w = time_wave(5000, 0.15);
        for t in 1..=2000u64 {
            w.insert(1, t * 2).unwrap();
        }
        let s = Synopsis::Dw(w);
        let bytes = s.to_bytes();
        let back = Synopsis::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }
}
