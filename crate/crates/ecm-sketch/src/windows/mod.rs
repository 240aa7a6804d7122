//! Sliding-window counter synopses.
//!
//! Three structures answer the same question — "how many events arrived in
//! the last `r` time units (or arrivals)?" — with relative error `epsilon`:
//!
//! * [`ExponentialHistogram`]: deterministic, power-of-two buckets, amortized
//!   O(1) updates, the default counter inside a sketch.
//! * [`DeterministicWave`]: deterministic, per-level position queues, O(1)
//!   worst-case updates, levels fixed at construction from a capacity hint.
//! * [`RandomizedWave`]: hash-sampled positions; loses the deterministic
//!   guarantee but merges losslessly across streams.
//!
//! All three share the window semantics defined here: an event with
//! timestamp `ts` is inside range `r` at time `now` iff `ts > now - r`.
//! Count-based windows use arrival ordinals as timestamps and behave
//! identically.

use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::wire::{Reader, Writer, SYNOPSIS_MAGIC, WIRE_VERSION};

mod eh;
mod rwave;
mod wave;

pub use eh::ExponentialHistogram;
pub use rwave::RandomizedWave;
pub use wave::DeterministicWave;

/// Milliseconds in time-based mode, arrival ordinal in count-based mode.
pub type Timestamp = u64;

/// Caller-assigned identity of a stream event. Only randomized waves use it
/// (for sampling); it must be stable across sites for lossless merging.
pub type EventId = u64;

/// Whether window length and query ranges are measured in time units or in
/// arrival counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    TimeBased,
    CountBased,
}

impl WindowMode {
    pub(crate) fn to_wire(self) -> u8 {
        match self {
            WindowMode::TimeBased => 0,
            WindowMode::CountBased => 1,
        }
    }

    pub(crate) fn from_wire(v: u8) -> Result<Self> {
        match v {
            0 => Ok(WindowMode::TimeBased),
            1 => Ok(WindowMode::CountBased),
            other => Err(Error::Format(format!("unknown window mode {other}"))),
        }
    }
}

/// Window length, mode, target relative error and per-window arrival bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    /// Window length N (time units or arrivals).
    pub window: u64,
    pub mode: WindowMode,
    /// Relative error of suffix queries, in (0, 1).
    pub epsilon: f64,
    /// Upper bound on arrivals inside any one window, u(N, S). Sizes the
    /// fixed level structure of waves; defaults to one event per time unit.
    pub capacity: u64,
}

impl WindowConfig {
    pub fn new(window: u64, mode: WindowMode, epsilon: f64) -> Result<Self> {
        // Default capacity hint: one event per unit of window, and in
        // count-based mode a window of N arrivals holds at most N events.
        Self::with_capacity(window, mode, epsilon, window)
    }

    pub fn with_capacity(
        window: u64,
        mode: WindowMode,
        epsilon: f64,
        capacity: u64,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidParameter("window length must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {epsilon} outside (0, 1)"
            )));
        }
        if capacity == 0 {
            return Err(Error::InvalidParameter("capacity hint must be at least 1".into()));
        }
        Ok(WindowConfig {
            window,
            mode,
            epsilon,
            capacity,
        })
    }

    pub fn time(window: u64, epsilon: f64) -> Result<Self> {
        Self::new(window, WindowMode::TimeBased, epsilon)
    }

    pub fn count(window: u64, epsilon: f64) -> Result<Self> {
        Self::new(window, WindowMode::CountBased, epsilon)
    }

    /// Validates a query range against the window and returns the exclusive
    /// lower timestamp bound, `None` when the range reaches past time zero.
    pub(crate) fn range_floor(&self, range: u64, now: Timestamp) -> Result<Option<Timestamp>> {
        if range == 0 || range > self.window {
            return Err(Error::RangeOutsideWindow {
                range,
                window: self.window,
            });
        }
        Ok(now.checked_sub(range))
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u8(self.mode.to_wire());
        w.f64(self.epsilon);
        w.u64(self.window);
        w.u64(self.capacity);
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self> {
        let mode = WindowMode::from_wire(r.u8()?)?;
        let epsilon = r.f64()?;
        let window = r.u64()?;
        let capacity = r.u64()?;
        Self::with_capacity(window, mode, epsilon, capacity)
    }
}

/// Is `ts` strictly inside the range that `floor` bounds from below?
#[inline]
pub(crate) fn after_floor(ts: Timestamp, floor: Option<Timestamp>) -> bool {
    floor.map_or(true, |f| ts > f)
}

/// Bits needed to represent values up to `n`.
#[inline]
pub(crate) fn bits_for(n: u64) -> u32 {
    64 - n.leading_zeros()
}

/// The backing structure of a sketch counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    ExponentialHistogram,
    DeterministicWave,
    RandomizedWave,
}

impl Backend {
    pub fn label(self) -> &'static str {
        match self {
            Backend::ExponentialHistogram => "eh",
            Backend::DeterministicWave => "dw",
            Backend::RandomizedWave => "rw",
        }
    }

    pub(crate) fn to_wire(self) -> u8 {
        match self {
            Backend::ExponentialHistogram => 0,
            Backend::DeterministicWave => 1,
            Backend::RandomizedWave => 2,
        }
    }

    pub(crate) fn from_wire(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Backend::ExponentialHistogram),
            1 => Ok(Backend::DeterministicWave),
            2 => Ok(Backend::RandomizedWave),
            other => Err(Error::Format(format!("unknown backend {other}"))),
        }
    }
}

/// Per-node error parameter for a balanced merge hierarchy of `levels`
/// pairwise-merge levels, such that the aggregated structure still answers
/// with relative error at most `target`.
///
/// Inverts `levels * e' * (1 + e') + e' = target` in closed form.
pub fn epsilon_for_merge_depth(target: f64, levels: u32) -> Result<f64> {
    if levels == 0 {
        return Err(Error::InvalidParameter("level count must be at least 1".into()));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target epsilon {target} outside (0, 1)"
        )));
    }
    let h = f64::from(levels);
    Ok(((1.0 + 2.0 * h + h * h + 4.0 * h * target).sqrt() - 1.0 - h) / (2.0 * h))
}

/// Worst-case relative error after `levels` pairwise merge levels of
/// structures initialized with per-node error `epsilon`.
pub fn merged_epsilon(epsilon: f64, levels: u32) -> f64 {
    let h = f64::from(levels);
    h * epsilon * (1.0 + epsilon) + epsilon
}

/// One reconstructed bucket of a deterministic synopsis: `bits` events known
/// to lie in the span `(start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogBucket {
    pub start: Timestamp,
    pub end: Timestamp,
    pub bits: u64,
}

/// Turns per-input bucket logs into the globally ordered insertion schedule
/// of the order-preserving merge: half of each bucket (rounded down) lands on
/// its start timestamp, the rest on its end timestamp. At equal timestamps
/// end events precede start events, inputs in index order.
pub(crate) fn merge_schedule(logs: &[Vec<LogBucket>]) -> Vec<(Timestamp, u64)> {
    // kind 0 = end, 1 = start
    let mut events: Vec<(Timestamp, u8, u64)> = Vec::new();
    for log in logs {
        for b in log {
            let at_start = b.bits / 2;
            let at_end = b.bits - at_start;
            if at_start > 0 {
                events.push((b.start, 1, at_start));
            }
            if at_end > 0 {
                events.push((b.end, 0, at_end));
            }
        }
    }
    events.sort_by_key(|&(ts, kind, _)| (ts, kind));
    events.into_iter().map(|(ts, _, bits)| (ts, bits)).collect()
}

/// A sketch counter: one of the three window synopses behind a common
/// insert/estimate surface.
#[derive(Debug, Clone, PartialEq)]
pub enum Synopsis {
    Eh(ExponentialHistogram),
    Dw(DeterministicWave),
    Rw(RandomizedWave),
}

impl Synopsis {
    pub fn backend(&self) -> Backend {
        match self {
            Synopsis::Eh(_) => Backend::ExponentialHistogram,
            Synopsis::Dw(_) => Backend::DeterministicWave,
            Synopsis::Rw(_) => Backend::RandomizedWave,
        }
    }

    pub fn config(&self) -> &WindowConfig {
        match self {
            Synopsis::Eh(s) => s.config(),
            Synopsis::Dw(s) => s.config(),
            Synopsis::Rw(s) => s.config(),
        }
    }

    /// Records `bits` unit events at `at`. The event id seeds randomized
    /// sampling; deterministic synopses ignore it.
    pub fn record(&mut self, bits: u64, at: Timestamp, event: EventId) -> Result<()> {
        match self {
            Synopsis::Eh(s) => s.insert(bits, at),
            Synopsis::Dw(s) => s.insert(bits, at),
            Synopsis::Rw(s) => {
                for unit in 0..bits.max(1) {
                    s.insert_event(mix64(event, unit), at)?;
                }
                if bits == 0 {
                    return Err(Error::ZeroCount);
                }
                Ok(())
            }
        }
    }

    /// Estimated number of events in the last `range` units at time `now`.
    pub fn estimate(&self, range: u64, now: Timestamp) -> Result<u64> {
        match self {
            Synopsis::Eh(s) => s.query(range, now),
            Synopsis::Dw(s) => s.query(range, now),
            Synopsis::Rw(s) => s.query(range, now),
        }
    }

    /// Space charged by the paper-style cost model (log-encoded timestamps
    /// and sizes), in bits.
    pub fn model_bits(&self) -> u64 {
        match self {
            Synopsis::Eh(s) => s.model_bits(),
            Synopsis::Dw(s) => s.model_bits(),
            Synopsis::Rw(s) => s.model_bits(),
        }
    }

    /// Actual heap footprint of the in-memory representation, in bytes.
    pub fn heap_bytes(&self) -> usize {
        match self {
            Synopsis::Eh(s) => s.heap_bytes(),
            Synopsis::Dw(s) => s.heap_bytes(),
            Synopsis::Rw(s) => s.heap_bytes(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.bytes(&SYNOPSIS_MAGIC);
        w.u16(WIRE_VERSION);
        w.u8(self.backend().to_wire());
        match self {
            Synopsis::Eh(s) => s.encode_body(w),
            Synopsis::Dw(s) => s.encode_body(w),
            Synopsis::Rw(s) => s.encode_body(w),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let s = Self::decode(&mut r)?;
        r.expect_end()?;
        Ok(s)
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self> {
        r.magic(&SYNOPSIS_MAGIC)?;
        r.check_version()?;
        match Backend::from_wire(r.u8()?)? {
            Backend::ExponentialHistogram => Ok(Synopsis::Eh(ExponentialHistogram::decode_body(r)?)),
            Backend::DeterministicWave => Ok(Synopsis::Dw(DeterministicWave::decode_body(r)?)),
            Backend::RandomizedWave => Ok(Synopsis::Rw(RandomizedWave::decode_body(r)?)),
        }
    }

    /// Order-preserving merge dispatching on the backend. `eps_prime` is the
    /// error parameter of the rebuilt deterministic synopsis and is ignored
    /// by randomized waves (their merge is lossless).
    pub fn merge(inputs: &[&Synopsis], eps_prime: f64) -> Result<Synopsis> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Incompatible("no inputs to merge".into()))?;
        match first {
            Synopsis::Eh(_) => {
                let ehs = inputs
                    .iter()
                    .map(|s| match s {
                        Synopsis::Eh(e) => Ok(e),
                        _ => Err(Error::Incompatible("mixed synopsis kinds in merge".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Synopsis::Eh(ExponentialHistogram::merge(&ehs, eps_prime)?))
            }
            Synopsis::Dw(_) => {
                let dws = inputs
                    .iter()
                    .map(|s| match s {
                        Synopsis::Dw(d) => Ok(d),
                        _ => Err(Error::Incompatible("mixed synopsis kinds in merge".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Synopsis::Dw(DeterministicWave::merge(&dws, eps_prime)?))
            }
            Synopsis::Rw(_) => {
                let rws = inputs
                    .iter()
                    .map(|s| match s {
                        Synopsis::Rw(r) => Ok(r),
                        _ => Err(Error::Incompatible("mixed synopsis kinds in merge".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Synopsis::Rw(RandomizedWave::merge(&rws)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_depth_epsilon_inverts_bound() {
        // One merge level at total error 0.21 needs per-node error 0.1.
        let e = epsilon_for_merge_depth(0.21, 1).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
        assert!((merged_epsilon(e, 1) - 0.21).abs() < 1e-12);
    }

    #[test]
    fn merge_depth_epsilon_vanishes_with_target() {
        for levels in [1, 2, 5, 16] {
            let mut prev = f64::INFINITY;
            for target in [0.5, 0.1, 0.01, 1e-4, 1e-8] {
                let e = epsilon_for_merge_depth(target, levels).unwrap();
                assert!(e > 0.0 && e < prev);
                prev = e;
            }
            assert!(prev < 1e-8);
        }
    }

    #[test]
    fn merge_depth_epsilon_satisfies_bound_at_depth_three() {
        let e = epsilon_for_merge_depth(0.3, 3).unwrap();
        assert!(merged_epsilon(e, 3) <= 0.3 + 1e-9);
    }

    #[test]
    fn schedule_orders_end_before_start_at_ties() {
        let logs = vec![
            vec![LogBucket {
                start: 5,
                end: 9,
                bits: 3,
            }],
            vec![LogBucket {
                start: 9,
                end: 12,
                bits: 2,
            }],
        ];
        let sched = merge_schedule(&logs);
        // bucket 1: 1 bit at 5, 2 bits at 9 (end); bucket 2: 1 bit at 9
        // (start), 1 bit at 12. End-at-9 precedes start-at-9.
        assert_eq!(sched, vec![(5, 1), (9, 2), (9, 1), (12, 1)]);
    }

    #[test]
    fn range_floor_validates() {
        let cfg = WindowConfig::time(100, 0.1).unwrap();
        assert_eq!(cfg.range_floor(30, 50).unwrap(), Some(20));
        assert_eq!(cfg.range_floor(80, 50).unwrap(), None);
        assert!(cfg.range_floor(0, 50).is_err());
        assert!(cfg.range_floor(101, 500).is_err());
    }
}
