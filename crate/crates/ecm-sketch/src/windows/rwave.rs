//! Randomized wave: hash-sampled sliding-window counting with lossless
//! merging.
//!
//! Every event carries a caller-assigned identity. A seeded
//! pairwise-independent hash assigns each identity a geometric depth; level
//! `i` keeps the most recent `c / epsilon^2` events of depth at least `i`
//! (sampling rate `2^-i`). A query scales the in-range sample count of the
//! lowest fully-covering level. Because level contents are a pure function
//! of the sampled event set, waves built on different sub-streams with the
//! same seed merge into exactly the wave of the union stream.

use std::collections::BTreeSet;
use std::ops::Bound;

use crate::error::{Error, Result};
use crate::hash::PairwiseHash;
use crate::wire::{Reader, Writer};

use super::{bits_for, EventId, Timestamp, WindowConfig, WindowMode};

/// Default `c` in the per-level budget `c / epsilon^2`. The bound constant
/// is left symbolic by the underlying analysis; 36 keeps the Chebyshev
/// failure rate from a covering level comfortably below typical deltas.
pub const DEFAULT_SAMPLE_CONSTANT: u64 = 36;

#[derive(Debug, Clone, PartialEq, Default)]
struct Level {
    /// Sampled events ordered by (timestamp, id); the window's newest `cap`
    /// survive.
    events: BTreeSet<(Timestamp, EventId)>,
    /// Newest timestamp ever evicted from this level; queries reaching at or
    /// past it cannot trust the level.
    evicted: Option<Timestamp>,
}

impl Level {
    fn insert(&mut self, entry: (Timestamp, EventId), cap: usize) {
        self.events.insert(entry);
        if self.events.len() > cap {
            let (ts, _) = self.events.pop_first().expect("level over capacity");
            self.evicted = Some(self.evicted.map_or(ts, |w| w.max(ts)));
        }
    }
}

/// Sampled sliding-window counter with an (epsilon, delta) guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedWave {
    config: WindowConfig,
    delta: f64,
    sample_constant: u64,
    seed: u64,
    hash: PairwiseHash,
    cap: usize,
    levels: Vec<Level>,
    last: Option<Timestamp>,
}

fn per_level_cap(epsilon: f64, sample_constant: u64) -> usize {
    (sample_constant as f64 / (epsilon * epsilon)).ceil() as usize
}

fn level_count(capacity: u64, cap: usize) -> u32 {
    // Top level must expect to span the whole per-window population with
    // headroom: cap * 2^(L-1) >= 2 * capacity.
    let mut levels = 1u32;
    while levels < 63 && (cap as u64) << (levels - 1) < capacity.saturating_mul(2) {
        levels += 1;
    }
    levels
}

impl RandomizedWave {
    pub fn new(config: WindowConfig, delta: f64, seed: u64) -> Result<Self> {
        Self::with_sample_constant(config, delta, seed, DEFAULT_SAMPLE_CONSTANT)
    }

    pub fn with_sample_constant(
        config: WindowConfig,
        delta: f64,
        seed: u64,
        sample_constant: u64,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta {delta} outside (0, 1)")));
        }
        if sample_constant == 0 {
            return Err(Error::InvalidParameter("sample constant must be positive".into()));
        }
        let cap = per_level_cap(config.epsilon, sample_constant);
        let levels = level_count(config.capacity, cap);
        Ok(RandomizedWave {
            config,
            delta,
            sample_constant,
            seed,
            hash: PairwiseHash::from_seed(seed),
            cap,
            levels: vec![Level::default(); levels as usize],
            last: None,
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn level_count(&self) -> u32 {
        self.levels.len() as u32
    }

    pub fn last_arrival(&self) -> Option<Timestamp> {
        self.last
    }

    /// Records one event. The id must be globally unique and stable across
    /// sites; sampling depth is a pure function of (seed, id).
    pub fn insert_event(&mut self, id: EventId, at: Timestamp) -> Result<()> {
        if let Some(last) = self.last {
            if at < last {
                return Err(Error::NonMonotonicTimestamp { at, last });
            }
        }
        self.last = Some(at);
        let depth = self.hash.level(id).min(self.level_count() - 1);
        for level in &mut self.levels[..=depth as usize] {
            level.insert((at, id), self.cap);
        }
        Ok(())
    }

    /// Estimate of the events in the last `range` units at `now`: in-range
    /// samples of the lowest fully-covering level, scaled by its rate.
    pub fn query(&self, range: u64, now: Timestamp) -> Result<u64> {
        let floor = self.config.range_floor(range, now)?;
        for (depth, level) in self.levels.iter().enumerate() {
            let covered = match (level.evicted, floor) {
                (None, _) => true,
                (Some(w), Some(f)) => w <= f,
                (Some(_), None) => false,
            };
            if !covered {
                continue;
            }
            let in_range = match floor {
                None => level.events.len(),
                Some(f) => level
                    .events
                    .range((Bound::Excluded((f, EventId::MAX)), Bound::Unbounded))
                    .count(),
            };
            return Ok((in_range as u64) << depth);
        }
        Err(Error::CapacityExceeded {
            capacity: self.config.capacity,
        })
    }

    /// Lossless merge of waves sharing seed and parameters. The output is
    /// identical to a wave built on the interleaved union stream: level
    /// contents are the newest `cap` sampled events of the union. Levels the
    /// inputs did not materialize are repopulated by rehashing the survivors
    /// of each input's deepest level.
    pub fn merge(inputs: &[&RandomizedWave]) -> Result<RandomizedWave> {
        let total_capacity = inputs
            .iter()
            .map(|i| i.config.capacity)
            .fold(0u64, u64::saturating_add);
        Self::merge_with_capacity(inputs, total_capacity.max(1))
    }

    /// As [`merge`](Self::merge), with an explicit per-window arrival bound
    /// for the output (it determines the output's level count).
    pub fn merge_with_capacity(
        inputs: &[&RandomizedWave],
        capacity: u64,
    ) -> Result<RandomizedWave> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Incompatible("no inputs to merge".into()))?;
        for input in inputs {
            let same = input.seed == first.seed
                && input.config.window == first.config.window
                && input.config.mode == first.config.mode
                && input.config.epsilon == first.config.epsilon
                && input.delta == first.delta
                && input.sample_constant == first.sample_constant;
            if !same {
                return Err(Error::Incompatible(
                    "randomized waves must share seed, window, epsilon, delta and \
                     sample constant"
                        .into(),
                ));
            }
        }
        let config = WindowConfig::with_capacity(
            first.config.window,
            first.config.mode,
            first.config.epsilon,
            capacity,
        )?;
        let mut merged =
            RandomizedWave::with_sample_constant(config, first.delta, first.seed, first.sample_constant)?;
        for (depth, out) in merged.levels.iter_mut().enumerate() {
            let mut union = BTreeSet::new();
            let mut watermark: Option<Timestamp> = None;
            for input in inputs {
                let deepest = input.levels.len() - 1;
                let source = depth.min(deepest);
                let level = &input.levels[source];
                if source == depth {
                    union.extend(level.events.iter().copied());
                } else {
                    // The input never materialized this depth: rehash the
                    // survivors of its deepest level.
                    union.extend(
                        level
                            .events
                            .iter()
                            .filter(|&&(_, id)| input.hash.level(id) as usize >= depth)
                            .copied(),
                    );
                }
                watermark = match (watermark, level.evicted) {
                    (None, w) | (w, None) => w,
                    (Some(a), Some(b)) => Some(a.max(b)),
                };
            }
            out.events = union;
            out.evicted = watermark;
            while out.events.len() > merged.cap {
                let (ts, _) = out.events.pop_first().expect("over capacity");
                out.evicted = Some(out.evicted.map_or(ts, |w| w.max(ts)));
            }
        }
        merged.last = inputs.iter().filter_map(|i| i.last).max();
        Ok(merged)
    }

    /// Paper-model space: a log-encoded timestamp plus an event identity per
    /// stored sample.
    pub fn model_bits(&self) -> u64 {
        let entry_bits =
            u64::from(bits_for(self.config.window)) + u64::from(bits_for(self.config.capacity));
        let entries: u64 = self.levels.iter().map(|l| l.events.len() as u64).sum();
        super::ExponentialHistogram::HEADER_MODEL_BITS + entries * entry_bits
    }

    pub fn heap_bytes(&self) -> usize {
        // BTreeSet nodes cost more than their payload; 2x is a fair charge.
        let entry = 2 * std::mem::size_of::<(Timestamp, EventId)>();
        std::mem::size_of::<Self>()
            + self.levels.len() * std::mem::size_of::<Level>()
            + self
                .levels
                .iter()
                .map(|l| l.events.len() * entry)
                .sum::<usize>()
    }

    /// Test hook: level contents and watermark at `depth`.
    pub fn level_snapshot(&self, depth: usize) -> (Vec<(Timestamp, EventId)>, Option<Timestamp>) {
        let level = &self.levels[depth];
        (level.events.iter().copied().collect(), level.evicted)
    }

    pub(crate) fn encode_body(&self, w: &mut Writer) {
        w.u8(self.config.mode.to_wire());
        w.f64(self.config.epsilon);
        w.f64(self.delta);
        w.u64(self.config.window);
        w.u64(self.config.capacity);
        w.u64(self.sample_constant);
        w.u64(self.seed);
        match self.last {
            Some(t) => {
                w.u8(1);
                w.u64(t);
            }
            None => w.u8(0),
        }
        w.u32(self.levels.len() as u32);
        for level in &self.levels {
            match level.evicted {
                Some(t) => {
                    w.u8(1);
                    w.u64(t);
                }
                None => w.u8(0),
            }
            w.u32(level.events.len() as u32);
            for &(ts, id) in &level.events {
                w.u64(ts);
                w.u64(id);
            }
        }
    }

    pub(crate) fn decode_body(r: &mut Reader) -> Result<Self> {
        let mode = WindowMode::from_wire(r.u8()?)?;
        let epsilon = r.f64()?;
        let delta = r.f64()?;
        let window = r.u64()?;
        let capacity = r.u64()?;
        let sample_constant = r.u64()?;
        let seed = r.u64()?;
        let config = WindowConfig::with_capacity(window, mode, epsilon, capacity)?;
        let mut wave = RandomizedWave::with_sample_constant(config, delta, seed, sample_constant)?;
        wave.last = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            other => return Err(Error::Format(format!("bad last-arrival tag {other}"))),
        };
        let level_count = r.u32()? as usize;
        if level_count != wave.levels.len() {
            return Err(Error::Format(format!(
                "frame has {level_count} levels, configuration implies {}",
                wave.levels.len()
            )));
        }
        for level in &mut wave.levels {
            level.evicted = match r.u8()? {
                0 => None,
                1 => Some(r.u64()?),
                other => return Err(Error::Format(format!("bad watermark tag {other}"))),
            };
            let len = r.u32()? as usize;
            if len > wave.cap {
                return Err(Error::Format(format!("level over capacity {}", wave.cap)));
            }
            for _ in 0..len {
                let entry = (r.u64()?, r.u64()?);
                if !level.events.insert(entry) {
                    return Err(Error::Format("duplicate sample in frame".into()));
                }
            }
        }
        Ok(wave)
    }
}
