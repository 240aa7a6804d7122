//! Exponential histogram: deterministic sliding-window counting.
//!
//! Buckets hold power-of-two numbers of unit events and carry only their end
//! timestamp; a bucket's start is implicitly the end of the next-older
//! bucket. Bucket sizes obey the classic size invariant
//! `C_j <= 2 * epsilon * (1 + sum of newer sizes)`, which confines the whole
//! query error to the half-counted oldest straddling bucket.
//!
//! Storage follows the fixed-arrays-of-deques layout: one deque per
//! power-of-two size, so a carry merge is two pops and a push.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

use super::{bits_for, merge_schedule, LogBucket, Timestamp, WindowConfig, WindowMode};

/// Deterministic epsilon-approximate count of events in any window suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialHistogram {
    config: WindowConfig,
    /// `levels[i]` holds end timestamps of the size-`2^i` buckets, oldest at
    /// the front. Sizes never decrease with age, so global age order is top
    /// level front-to-back, then downwards.
    levels: Vec<VecDeque<Timestamp>>,
    /// Buckets allowed per level before a carry; `k + 1` may be present.
    k: usize,
    /// Sum of all bucket sizes.
    total: u64,
    last: Option<Timestamp>,
    /// Lower bound for the start of the oldest bucket: the end of the last
    /// expired bucket, or one tick before the first arrival.
    origin: Timestamp,
}

/// Buckets per level that keep the size invariant tight: a carry fires when
/// a level exceeds `k + 1` entries, leaving `k` behind, and `k = ⌈(1-e)/e⌉`
/// newer buckets per lower level are enough for every merged bucket to
/// satisfy `C <= 2e(1 + newer)`.
fn buckets_per_level(epsilon: f64) -> usize {
    (((1.0 - epsilon) / epsilon).ceil() as usize).max(1)
}

impl ExponentialHistogram {
    pub fn new(config: WindowConfig) -> Self {
        ExponentialHistogram {
            k: buckets_per_level(config.epsilon),
            config,
            levels: Vec::new(),
            total: 0,
            last: None,
            origin: 0,
        }
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    /// Sum of all live bucket sizes (events not yet expired).
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn last_arrival(&self) -> Option<Timestamp> {
        self.last
    }

    pub fn bucket_count(&self) -> usize {
        self.levels.iter().map(VecDeque::len).sum()
    }

    /// Registers `bits` unit events at `at`. Timestamps must not decrease.
    pub fn insert(&mut self, bits: u64, at: Timestamp) -> Result<()> {
        if bits == 0 {
            return Err(Error::ZeroCount);
        }
        if let Some(last) = self.last {
            if at < last {
                return Err(Error::NonMonotonicTimestamp { at, last });
            }
        } else {
            self.origin = at.saturating_sub(1);
        }
        self.last = Some(at);
        self.expire(at);
        for _ in 0..bits {
            self.push_unit(at);
        }
        Ok(())
    }

    fn push_unit(&mut self, at: Timestamp) {
        if self.levels.is_empty() {
            self.levels.push(VecDeque::new());
        }
        self.levels[0].push_back(at);
        self.total += 1;
        let mut level = 0;
        while self.levels[level].len() > self.k + 1 {
            // Carry: the two oldest buckets of this level fuse into one
            // bucket of the next size, keeping the newer end timestamp.
            self.levels[level].pop_front();
            let newer_end = self.levels[level].pop_front().expect("level overfull");
            if self.levels.len() == level + 1 {
                self.levels.push(VecDeque::new());
            }
            self.levels[level + 1].push_back(newer_end);
            level += 1;
        }
    }

    /// Drops buckets whose newest event left the window.
    fn expire(&mut self, now: Timestamp) {
        let Some(floor) = now.checked_sub(self.config.window) else {
            return;
        };
        // The globally oldest bucket is the front of the highest non-empty
        // level; expiry only ever removes from that end.
        loop {
            let Some(level) = self.levels.iter().rposition(|l| !l.is_empty()) else {
                return;
            };
            match self.levels[level].front() {
                Some(&end) if end <= floor => {
                    self.levels[level].pop_front();
                    self.total -= 1 << level;
                    self.origin = self.origin.max(end);
                }
                _ => return,
            }
        }
    }

    /// Estimated number of events in the last `range` units at `now`: full
    /// sizes of covered buckets plus half (rounded up) of the straddler.
    ///
    /// A bucket's events lie in the closed-open span `[start, end]`: arrivals
    /// sharing a timestamp can sit on both sides of a bucket boundary, so a
    /// bucket starting exactly at the range floor still straddles it.
    pub fn query(&self, range: u64, now: Timestamp) -> Result<u64> {
        let floor = self.config.range_floor(range, now)?;
        let mut acc = 0u64;
        let mut prev_end = self.origin;
        for (level, deque) in self.levels.iter().enumerate().rev() {
            let size = 1u64 << level;
            for &end in deque {
                let start = prev_end;
                prev_end = end;
                match floor {
                    Some(f) if end <= f => continue,
                    Some(f) if start <= f => acc += size.div_ceil(2),
                    _ => acc += size,
                }
            }
        }
        Ok(acc)
    }

    /// Bucket sizes oldest to newest; test and audit hook.
    pub fn bucket_sizes(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.bucket_count());
        for (level, deque) in self.levels.iter().enumerate().rev() {
            out.extend(std::iter::repeat(1u64 << level).take(deque.len()));
        }
        out
    }

    /// Checks the size invariant `C_j <= 2e(1 + sum of newer sizes)` for
    /// every bucket of size at least two (singleton buckets carry no halving
    /// error and cannot satisfy it near the stream head).
    pub fn satisfies_size_invariant(&self) -> bool {
        let sizes = self.bucket_sizes();
        let mut newer = 0u64;
        for &size in sizes.iter().rev() {
            if size >= 2 && (size as f64) > 2.0 * self.config.epsilon * (1.0 + newer as f64) {
                return false;
            }
            newer += size;
        }
        true
    }

    /// Bucket spans oldest to newest: `bits` events known to lie in
    /// `(start, end]`. This is the log view the order-preserving merge
    /// replays.
    pub fn bucket_log(&self) -> Vec<LogBucket> {
        let mut out = Vec::with_capacity(self.bucket_count());
        let mut prev_end = self.origin;
        for (level, deque) in self.levels.iter().enumerate().rev() {
            for &end in deque {
                out.push(LogBucket {
                    start: prev_end,
                    end,
                    bits: 1 << level,
                });
                prev_end = end;
            }
        }
        out
    }

    /// Order-preserving aggregation of time-based histograms over the same
    /// window length. The output is rebuilt with error `eps_prime` by
    /// replaying every input bucket as half of its events at its start and
    /// half at its end, in global timestamp order; any suffix query of the
    /// result errs by at most `e + e' + e*e'` relative to the union stream.
    pub fn merge(inputs: &[&ExponentialHistogram], eps_prime: f64) -> Result<ExponentialHistogram> {
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
        let logs: Vec<_> = inputs.iter().map(|i| i.bucket_log()).collect();
        let mut merged = ExponentialHistogram::new(config);
        for (ts, bits) in merge_schedule(&logs) {
            merged.insert(bits, ts)?;
        }
        Ok(merged)
    }

    /// Paper-model space: log-encoded timestamp plus a size exponent per
    /// bucket.
    pub fn model_bits(&self) -> u64 {
        let ts_bits = u64::from(bits_for(self.config.window));
        let exp_bits = u64::from(bits_for(u64::from(bits_for(self.config.capacity))));
        Self::HEADER_MODEL_BITS + self.bucket_count() as u64 * (ts_bits + exp_bits)
    }

    /// Fixed model charge for the frame header.
    pub(crate) const HEADER_MODEL_BITS: u64 = 256;

    pub fn heap_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.levels.capacity() * std::mem::size_of::<VecDeque<Timestamp>>()
            + self
                .levels
                .iter()
                .map(|d| d.capacity() * std::mem::size_of::<Timestamp>())
                .sum::<usize>()
    }

    pub(crate) fn encode_body(&self, w: &mut Writer) {
        self.config.encode(w);
        w.u64(self.origin);
        match self.last {
            Some(t) => {
                w.u8(1);
                w.u64(t);
            }
            None => w.u8(0),
        }
        w.u64(self.total);
        w.u32(self.levels.len() as u32);
        for deque in &self.levels {
            w.u32(deque.len() as u32);
            for &end in deque {
                w.u64(end);
            }
        }
    }

    pub(crate) fn decode_body(r: &mut Reader) -> Result<Self> {
        let config = WindowConfig::decode(r)?;
        let origin = r.u64()?;
        let last = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            other => return Err(Error::Format(format!("bad last-arrival tag {other}"))),
        };
        let total = r.u64()?;
        let level_count = r.u32()? as usize;
        let mut levels = Vec::with_capacity(level_count);
        let mut sum = 0u64;
        for level in 0..level_count {
            let len = r.u32()? as usize;
            let mut deque = VecDeque::with_capacity(len);
            let mut prev = None;
            for _ in 0..len {
                let end = r.u64()?;
                if prev.is_some_and(|p| end < p) {
                    return Err(Error::Format("bucket ends out of order".into()));
                }
                prev = Some(end);
                deque.push_back(end);
            }
            sum += (len as u64) << level;
            levels.push(deque);
        }
        if sum != total {
            return Err(Error::Format(format!(
                "bucket sizes sum to {sum}, header says {total}"
            )));
        }
        Ok(ExponentialHistogram {
            k: buckets_per_level(config.epsilon),
            config,
            levels,
            total,
            last,
            origin,
        })
    }
}
