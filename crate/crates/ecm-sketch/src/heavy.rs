//! Sliding-window heavy hitters and range counts over a dyadic stack.
//!
//! The universe `[0, 2^L)` is covered by one sketch per dyadic level: level
//! `i` counts prefixes `x >> i`, i.e. aligned blocks of `2^i` keys. An
//! arrival updates all `L` levels; heavy-hitter detection walks down from
//! the two half-universe blocks, pruning every block whose estimate falls
//! below the threshold, and re-checks survivors against the finest level
//! before emitting them. Range counts sum the canonical dyadic cover of the
//! interval.

use crate::error::{Error, Result};
use crate::hash::splitmix64;
use crate::plan::{QueryProfile, SketchPlan};
use crate::sketch::EcmSketch;
use crate::windows::{Backend, EventId, Synopsis, Timestamp, WindowConfig, WindowMode};
use crate::wire::{Reader, Writer};

/// Construction parameters of a [`DyadicStack`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicConfig {
    /// Universe is `[0, 2^universe_bits)`; callers pad to a power of two.
    pub universe_bits: u32,
    /// Total relative error target of the stack.
    pub epsilon: f64,
    /// Total failure probability across the whole detection walk.
    pub delta: f64,
    /// Smallest frequency fraction the stack is sized to detect; the delta
    /// budget is split over the `2L/phi` candidate tests of a detection.
    pub phi: f64,
    pub backend: Backend,
    pub window: u64,
    pub mode: WindowMode,
    pub seed: u64,
    /// Track the total arrival count in a dedicated window counter instead
    /// of estimating it from the finest sketch's rows.
    pub dedicated_total: bool,
}

/// Frequency threshold of a heavy-hitter query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Minimum number of in-range occurrences.
    Absolute(u64),
    /// Minimum fraction of the in-range arrival count, in (0, 1).
    Fraction(f64),
}

/// `log |U|` sketches over dyadic prefixes of the key universe.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicStack {
    config: DyadicConfig,
    levels: Vec<EcmSketch>,
    total: Option<Synopsis>,
    events: u64,
}

impl DyadicStack {
    pub fn new(config: DyadicConfig) -> Result<DyadicStack> {
        if config.universe_bits == 0 || config.universe_bits >= 63 {
            return Err(Error::InvalidParameter(format!(
                "universe bits {} outside 1..=62",
                config.universe_bits
            )));
        }
        if !(config.phi > 0.0 && config.phi < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "phi {} outside (0, 1)",
                config.phi
            )));
        }
        let levels_f = f64::from(config.universe_bits);
        // Split the failure budget across the candidate tests of a
        // detection walk, 2/phi of them per level.
        let delta_level = (config.delta * config.phi / (2.0 * levels_f)).clamp(1e-12, 0.5);
        let plan = SketchPlan::new(config.epsilon, delta_level, QueryProfile::Point, config.backend)?;
        let mut seed_state = config.seed;
        let levels = (0..config.universe_bits)
            .map(|_| {
                EcmSketch::new(plan, config.window, config.mode, splitmix64(&mut seed_state))
            })
            .collect::<Result<Vec<_>>>()?;
        let total = if config.dedicated_total {
            let window_cfg =
                WindowConfig::new(config.window, config.mode, plan.epsilon_sw)?;
            Some(Synopsis::Eh(crate::windows::ExponentialHistogram::new(
                window_cfg,
            )))
        } else {
            None
        };
        Ok(DyadicStack {
            config,
            levels,
            total,
            events: 0,
        })
    }

    pub fn config(&self) -> &DyadicConfig {
        &self.config
    }

    pub fn universe(&self) -> u64 {
        1u64 << self.config.universe_bits
    }

    pub fn level_count(&self) -> u32 {
        self.config.universe_bits
    }

    /// Records an arrival of `key`: level `i` learns prefix `key >> i`,
    /// exactly one sketch-add per level.
    pub fn add(&mut self, key: u64, at: Timestamp, event: EventId) -> Result<()> {
        if key >= self.universe() {
            return Err(Error::KeyOutsideUniverse {
                key,
                universe: self.universe(),
            });
        }
        for (level, sketch) in self.levels.iter_mut().enumerate() {
            sketch.add_u64(key >> level, 1, at, event)?;
        }
        if let Some(total) = &mut self.total {
            total.record(1, at, event)?;
        }
        self.events += 1;
        Ok(())
    }

    /// Estimated in-range arrival count, from the dedicated counter when
    /// present, otherwise from the finest sketch's row averages.
    pub fn l1_estimate(&self, range: u64, now: Timestamp) -> Result<f64> {
        match &self.total {
            Some(total) => Ok(total.estimate(range, now)? as f64),
            None => self.levels[0].l1_estimate(range, now),
        }
    }

    /// Group-testing walk: every key with in-range frequency at least
    /// `(phi + epsilon) * L1` is returned; keys below `phi * L1` appear only
    /// with probability `delta`. Results ascend by key.
    pub fn detect(
        &self,
        threshold: Threshold,
        range: u64,
        now: Timestamp,
    ) -> Result<Vec<(u64, u64)>> {
        let cutoff = match threshold {
            Threshold::Absolute(n) => {
                if n == 0 {
                    return Err(Error::InvalidParameter("threshold must be positive".into()));
                }
                n as f64
            }
            Threshold::Fraction(phi) => {
                if !(phi > 0.0 && phi < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "fractional threshold {phi} outside (0, 1)"
                    )));
                }
                phi * self.l1_estimate(range, now)?
            }
        };
        let top = self.config.universe_bits as usize - 1;
        let mut candidates: Vec<u64> = vec![0, 1];
        for level in (1..=top).rev() {
            let mut next = Vec::with_capacity(candidates.len() * 2);
            for prefix in candidates {
                let est = self.levels[level].point_query_u64(prefix, range, now)?;
                if est as f64 >= cutoff {
                    next.push(prefix << 1);
                    next.push((prefix << 1) | 1);
                }
            }
            candidates = next;
        }
        let mut out = Vec::new();
        for key in candidates {
            let est = self.levels[0].point_query_u64(key, range, now)?;
            if est as f64 >= cutoff {
                out.push((key, est));
            }
        }
        Ok(out)
    }

    /// Estimated number of in-range arrivals with key in `[lo, hi]`: the sum
    /// of point queries over the canonical dyadic cover, at most `2L` terms.
    pub fn range_count(&self, lo: u64, hi: u64, range: u64, now: Timestamp) -> Result<u64> {
        if lo > hi || hi >= self.universe() {
            return Err(Error::KeyOutsideUniverse {
                key: hi.max(lo),
                universe: self.universe(),
            });
        }
        let mut sum = 0u64;
        for (level, prefix) in dyadic_cover(lo, hi, self.config.universe_bits) {
            sum = sum.saturating_add(
                self.levels[level as usize].point_query_u64(prefix, range, now)?,
            );
        }
        Ok(sum)
    }

    /// Serializes as tagged per-level sketch frames.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.config.universe_bits);
        w.f64(self.config.epsilon);
        w.f64(self.config.delta);
        w.f64(self.config.phi);
        w.u8(self.config.backend.to_wire());
        w.u64(self.config.window);
        w.u8(self.config.mode.to_wire());
        w.u64(self.config.seed);
        w.u64(self.events);
        match &self.total {
            Some(total) => {
                w.u8(1);
                total.encode(&mut w);
            }
            None => w.u8(0),
        }
        for (level, sketch) in self.levels.iter().enumerate() {
            w.u32(level as u32);
            w.bytes(&sketch.to_bytes());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DyadicStack> {
        let mut r = Reader::new(bytes);
        let universe_bits = r.u32()?;
        let epsilon = r.f64()?;
        let delta = r.f64()?;
        let phi = r.f64()?;
        let backend = Backend::from_wire(r.u8()?)?;
        let window = r.u64()?;
        let mode = WindowMode::from_wire(r.u8()?)?;
        let seed = r.u64()?;
        let events = r.u64()?;
        let total = match r.u8()? {
            0 => None,
            1 => Some(Synopsis::decode(&mut r)?),
            other => return Err(Error::Format(format!("bad total tag {other}"))),
        };
        let config = DyadicConfig {
            universe_bits,
            epsilon,
            delta,
            phi,
            backend,
            window,
            mode,
            seed,
            dedicated_total: total.is_some(),
        };
        let mut levels = Vec::with_capacity(universe_bits as usize);
        for expected in 0..universe_bits {
            let tag = r.u32()?;
            if tag != expected {
                return Err(Error::Format(format!(
                    "level tag {tag} out of order, expected {expected}"
                )));
            }
            levels.push(EcmSketch::decode(&mut r)?);
        }
        r.expect_end()?;
        Ok(DyadicStack {
            config,
            levels,
            total,
            events,
        })
    }
}

/// Canonical minimal dyadic cover of `[lo, hi]`: maximal aligned blocks,
/// left to right, pairwise disjoint, level capped at the half universe.
pub fn dyadic_cover(lo: u64, hi: u64, universe_bits: u32) -> Vec<(u32, u64)> {
    debug_assert!(lo <= hi);
    let max_level = universe_bits.saturating_sub(1);
    let mut out = Vec::new();
    let mut cursor = lo;
    loop {
        let alignment = if cursor == 0 { max_level } else { cursor.trailing_zeros() };
        let mut level = alignment.min(max_level);
        while level > 0 && (1u64 << level) - 1 > hi - cursor {
            level -= 1;
        }
        out.push((level, cursor >> level));
        let step = 1u64 << level;
        if hi - cursor < step {
            break;
        }
        cursor += step;
    }
    out
}
