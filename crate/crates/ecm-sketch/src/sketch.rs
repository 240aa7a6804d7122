//! The sketch: a `w x d` grid of sliding-window counters.
//!
//! Adding a key routes it through `d` pairwise-independent row hashes and
//! records the arrival in one counter per row; a point query takes the
//! minimum of the `d` counter estimates for the range. Overestimation is
//! bounded by the combined hash and window error relative to the number of
//! in-range arrivals; underestimation only by the window error relative to
//! the key's own frequency.
//!
//! Sketches built from the same master seed and plan are composable: the
//! counter-wise order-preserving merge yields a sketch of the interleaved
//! union stream.

use crate::error::{Error, Result};
use crate::hash::{hash_key, splitmix64, PairwiseHash};
use crate::plan::{QueryProfile, SketchPlan};
use crate::windows::{
    merged_epsilon, Backend, DeterministicWave, EventId, ExponentialHistogram, RandomizedWave,
    Synopsis, Timestamp, WindowConfig, WindowMode,
};
use crate::wire::{Reader, Writer, SKETCH_MAGIC, WIRE_VERSION};

/// Model-level and actual space use of a sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryReport {
    /// Paper-style cost model: log-encoded timestamps and sizes, summed over
    /// counters, in bits.
    pub model_bits: u64,
    /// The model rounded up to bytes.
    pub model_bytes: u64,
    /// Actual heap footprint of the in-memory representation.
    pub actual_bytes: u64,
}

/// Count-Min sketch over sliding windows.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmSketch {
    plan: SketchPlan,
    window: WindowConfig,
    master_seed: u64,
    key_seed: u64,
    /// Pairwise merge levels this sketch is the result of; 0 for a sketch
    /// fed directly from a stream.
    merge_depth: u32,
    row_hashes: Vec<PairwiseHash>,
    /// Row-major `depth x width` grid.
    counters: Vec<Synopsis>,
    last: Option<Timestamp>,
}

impl EcmSketch {
    /// Builds an empty sketch. The capacity hint bounds arrivals per window
    /// per counter and defaults to one event per window unit.
    pub fn new(
        plan: SketchPlan,
        window: u64,
        mode: WindowMode,
        master_seed: u64,
    ) -> Result<EcmSketch> {
        Self::with_capacity(plan, window, mode, window, master_seed)
    }

    pub fn with_capacity(
        plan: SketchPlan,
        window: u64,
        mode: WindowMode,
        capacity: u64,
        master_seed: u64,
    ) -> Result<EcmSketch> {
        let config = WindowConfig::with_capacity(window, mode, plan.epsilon_sw, capacity)?;
        let mut seed_state = master_seed;
        let key_seed = splitmix64(&mut seed_state);
        let counter_seed = splitmix64(&mut seed_state);
        let row_hashes: Vec<PairwiseHash> = (0..plan.depth)
            .map(|_| PairwiseHash::from_seed(splitmix64(&mut seed_state)))
            .collect();
        let template = match plan.backend {
            Backend::ExponentialHistogram => Synopsis::Eh(ExponentialHistogram::new(config)),
            Backend::DeterministicWave => Synopsis::Dw(DeterministicWave::new(config)),
            Backend::RandomizedWave => {
                Synopsis::Rw(RandomizedWave::new(config, plan.delta_sw, counter_seed)?)
            }
        };
        let counters = vec![template; plan.counters()];
        Ok(EcmSketch {
            plan,
            window: config,
            master_seed,
            key_seed,
            merge_depth: 0,
            row_hashes,
            counters,
            last: None,
        })
    }

    pub fn plan(&self) -> &SketchPlan {
        &self.plan
    }

    pub fn window(&self) -> &WindowConfig {
        &self.window
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn merge_depth(&self) -> u32 {
        self.merge_depth
    }

    pub fn last_arrival(&self) -> Option<Timestamp> {
        self.last
    }

    /// Point-query error bound of this sketch relative to the in-range
    /// arrival count, accounting for accumulated merge depth.
    pub fn effective_epsilon(&self) -> f64 {
        let sw = match self.plan.backend {
            // Randomized waves merge losslessly.
            Backend::RandomizedWave => self.plan.epsilon_sw,
            _ if self.merge_depth == 0 => self.plan.epsilon_sw,
            _ => merged_epsilon(self.plan.epsilon_sw, self.merge_depth),
        };
        sw + self.plan.epsilon_cm + sw * self.plan.epsilon_cm
    }

    #[inline]
    fn counter_index(&self, row: usize, hashed_key: u64) -> usize {
        let col = self.row_hashes[row].index_in(hashed_key, self.plan.width) as usize;
        row * self.plan.width as usize + col
    }

    /// Records `value` arrivals of `key` at `at`. The event id feeds
    /// randomized-wave sampling and must be globally unique and stable
    /// across sites for lossless composition; deterministic backends ignore
    /// it.
    pub fn add(&mut self, key: &[u8], value: u64, at: Timestamp, event: EventId) -> Result<()> {
        if value == 0 {
            return Err(Error::ZeroCount);
        }
        if let Some(last) = self.last {
            if at < last {
                return Err(Error::NonMonotonicTimestamp { at, last });
            }
        }
        self.last = Some(at);
        let hashed = hash_key(self.key_seed, key);
        for row in 0..self.plan.depth as usize {
            let idx = self.counter_index(row, hashed);
            self.counters[idx].record(value, at, event)?;
        }
        Ok(())
    }

    /// [`add`](Self::add) for integer keys.
    pub fn add_u64(&mut self, key: u64, value: u64, at: Timestamp, event: EventId) -> Result<()> {
        self.add(&key.to_le_bytes(), value, at, event)
    }

    /// Estimated frequency of `key` within the last `range` units at `now`:
    /// the minimum of the `d` row estimates.
    pub fn point_query(&self, key: &[u8], range: u64, now: Timestamp) -> Result<u64> {
        let hashed = hash_key(self.key_seed, key);
        let mut best = u64::MAX;
        for row in 0..self.plan.depth as usize {
            let idx = self.counter_index(row, hashed);
            best = best.min(self.counters[idx].estimate(range, now)?);
        }
        Ok(best)
    }

    pub fn point_query_u64(&self, key: u64, range: u64, now: Timestamp) -> Result<u64> {
        self.point_query(&key.to_le_bytes(), range, now)
    }

    /// Every counter's range estimate, row-major. This is the numeric grid
    /// the monitoring layer works on.
    pub fn counter_grid(&self, range: u64, now: Timestamp) -> Result<Vec<u64>> {
        self.counters
            .iter()
            .map(|c| c.estimate(range, now))
            .collect()
    }

    /// Estimated number of in-range arrivals: each row's counters sum to
    /// (about) the arrival count, and averaging the rows cancels most of the
    /// per-counter noise.
    pub fn l1_estimate(&self, range: u64, now: Timestamp) -> Result<f64> {
        let grid = self.counter_grid(range, now)?;
        let w = self.plan.width as usize;
        let sum: u64 = grid.iter().sum();
        Ok(sum as f64 / (grid.len() / w) as f64)
    }

    /// Estimated inner product of two streams over the range: per row, the
    /// dot product of the counter vectors; then the minimum across rows.
    pub fn inner_product(&self, other: &EcmSketch, range: u64, now: Timestamp) -> Result<u64> {
        self.check_compatible(other)?;
        let a = self.counter_grid(range, now)?;
        let b = other.counter_grid(range, now)?;
        let w = self.plan.width as usize;
        let mut best = u128::MAX;
        for row in 0..self.plan.depth as usize {
            let dot: u128 = (0..w)
                .map(|i| u128::from(a[row * w + i]) * u128::from(b[row * w + i]))
                .sum();
            best = best.min(dot);
        }
        Ok(u64::try_from(best).unwrap_or(u64::MAX))
    }

    /// Estimated second frequency moment of this sketch's stream.
    pub fn self_join(&self, range: u64, now: Timestamp) -> Result<u64> {
        self.inner_product(self, range, now)
    }

    /// Two sketches compose (and their estimates combine) iff they share
    /// dimensions, hash seeds, window and plan.
    pub fn is_compatible(&self, other: &EcmSketch) -> bool {
        self.plan == other.plan
            && self.master_seed == other.master_seed
            && self.window.window == other.window.window
            && self.window.mode == other.window.mode
    }

    fn check_compatible(&self, other: &EcmSketch) -> Result<()> {
        if !self.is_compatible(other) {
            return Err(Error::Incompatible(
                "sketches differ in plan, seed or window".into(),
            ));
        }
        Ok(())
    }

    /// Order-preserving composition: merges every counter of the inputs
    /// into a sketch of the interleaved union stream.
    ///
    /// For deterministic backends the merged counters are rebuilt with
    /// window error `eps_prime` and the point-query bound inflates to
    /// `e_cm + e'_sw + e_cm*e'_sw` with `e'_sw = e + e' + e*e'`; randomized
    /// waves merge losslessly and ignore `eps_prime`. Count-based windows
    /// cannot be composed on deterministic backends.
    pub fn compose(inputs: &[&EcmSketch], eps_prime: f64) -> Result<EcmSketch> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Incompatible("no inputs to compose".into()))?;
        for other in &inputs[1..] {
            first.check_compatible(other)?;
        }
        let mut counters = Vec::with_capacity(first.counters.len());
        for idx in 0..first.counters.len() {
            let column: Vec<&Synopsis> = inputs.iter().map(|s| &s.counters[idx]).collect();
            counters.push(Synopsis::merge(&column, eps_prime)?);
        }
        let mut plan = first.plan;
        if plan.backend != Backend::RandomizedWave {
            plan.epsilon_sw = eps_prime;
        }
        let window = *counters[0].config();
        Ok(EcmSketch {
            plan,
            window,
            master_seed: first.master_seed,
            key_seed: first.key_seed,
            merge_depth: inputs.iter().map(|s| s.merge_depth).max().unwrap_or(0) + 1,
            row_hashes: first.row_hashes.clone(),
            counters,
            last: inputs.iter().filter_map(|s| s.last).max(),
        })
    }

    pub fn memory_report(&self) -> MemoryReport {
        let model_bits: u64 = self.counters.iter().map(Synopsis::model_bits).sum();
        let actual: usize = std::mem::size_of::<Self>()
            + self.row_hashes.capacity() * std::mem::size_of::<PairwiseHash>()
            + self.counters.iter().map(Synopsis::heap_bytes).sum::<usize>();
        MemoryReport {
            model_bits,
            model_bytes: model_bits.div_ceil(8),
            actual_bytes: actual as u64,
        }
    }

    /// Serialized envelope: plan, seed and merge depth, followed by the
    /// `w x d` counter frames. These bytes are both the persistence format
    /// and the composition wire format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&SKETCH_MAGIC);
        w.u16(WIRE_VERSION);
        w.u8(self.plan.backend.to_wire());
        w.u8(self.window.mode.to_wire());
        w.u8(self.plan.profile.to_wire());
        w.f64(self.plan.epsilon);
        w.f64(self.plan.delta);
        w.f64(self.plan.epsilon_sw);
        w.f64(self.plan.epsilon_cm);
        w.f64(self.plan.delta_sw);
        w.f64(self.plan.delta_cm);
        w.u32(self.plan.width);
        w.u32(self.plan.depth);
        w.u64(self.window.window);
        w.u64(self.window.capacity);
        w.u64(self.master_seed);
        w.u32(self.merge_depth);
        match self.last {
            Some(t) => {
                w.u8(1);
                w.u64(t);
            }
            None => w.u8(0),
        }
        for counter in &self.counters {
            counter.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<EcmSketch> {
        let mut r = Reader::new(bytes);
        let sketch = Self::decode(&mut r)?;
        r.expect_end()?;
        Ok(sketch)
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<EcmSketch> {
        r.magic(&SKETCH_MAGIC)?;
        r.check_version()?;
        let backend = Backend::from_wire(r.u8()?)?;
        let mode = WindowMode::from_wire(r.u8()?)?;
        let profile = QueryProfile::from_wire(r.u8()?)?;
        let epsilon = r.f64()?;
        let delta = r.f64()?;
        let epsilon_sw = r.f64()?;
        let epsilon_cm = r.f64()?;
        let delta_sw = r.f64()?;
        let delta_cm = r.f64()?;
        let width = r.u32()?;
        let depth = r.u32()?;
        let window = r.u64()?;
        let capacity = r.u64()?;
        let master_seed = r.u64()?;
        let merge_depth = r.u32()?;
        let last = match r.u8()? {
            0 => None,
            1 => Some(r.u64()?),
            other => return Err(Error::Format(format!("bad last-arrival tag {other}"))),
        };
        if width == 0 || depth == 0 {
            return Err(Error::Format("degenerate grid dimensions".into()));
        }
        let plan = SketchPlan {
            epsilon,
            delta,
            profile,
            backend,
            epsilon_sw,
            epsilon_cm,
            delta_sw,
            delta_cm,
            width,
            depth,
        };
        let mut seed_state = master_seed;
        let key_seed = splitmix64(&mut seed_state);
        let _counter_seed = splitmix64(&mut seed_state);
        let row_hashes: Vec<PairwiseHash> = (0..depth)
            .map(|_| PairwiseHash::from_seed(splitmix64(&mut seed_state)))
            .collect();
        let mut counters = Vec::with_capacity(plan.counters());
        for _ in 0..plan.counters() {
            let counter = Synopsis::decode(r)?;
            if counter.backend() != backend {
                return Err(Error::Format("counter backend differs from envelope".into()));
            }
            counters.push(counter);
        }
        let window = WindowConfig::with_capacity(window, mode, epsilon_sw, capacity)?;
        Ok(EcmSketch {
            plan,
            window,
            master_seed,
            key_seed,
            merge_depth,
            row_hashes,
            counters,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_plan(backend: Backend) -> SketchPlan {
        SketchPlan::new(0.2, 0.2, QueryProfile::Point, backend).unwrap()
    }

    fn eh_sketch(window: u64, seed: u64) -> EcmSketch {
        EcmSketch::new(
            point_plan(Backend::ExponentialHistogram),
            window,
            WindowMode::TimeBased,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn fresh_add_touches_exactly_d_counters() {
        let mut s = eh_sketch(1000, 1);
        s.add(b"key", 1, 5, 0).unwrap();
        let nonzero = s
            .counter_grid(1000, 5)
            .unwrap()
            .into_iter()
            .filter(|&v| v > 0)
            .count();
        assert_eq!(nonzero, s.plan().depth as usize);
    }

    #[test]
    fn empty_sketch_answers_zero() {
        let s = eh_sketch(1000, 1);
        assert_eq!(s.point_query(b"never", 1000, 10).unwrap(), 0);
    }

    #[test]
    fn zero_value_is_rejected() {
        let mut s = eh_sketch(1000, 1);
        assert_eq!(s.add(b"key", 0, 5, 0), Err(Error::ZeroCount));
    }

    #[test]
    fn lone_key_estimate_stays_within_window_error() {
        let mut s = eh_sketch(10_000, 3);
        for t in 1..=100u64 {
            s.add(b"alone", 1, t * 7, t).unwrap();
        }
        let est = s.point_query(b"alone", 10_000, 700).unwrap() as f64;
        let sw = s.plan().epsilon_sw;
        assert!(est >= 100.0 * (1.0 - sw) - 1e-9);
        assert!(est <= 100.0 * (1.0 + sw) + 1e-9);
    }

    #[test]
    fn row_min_dominates_every_row() {
        let mut s = eh_sketch(1000, 9);
        for t in 1..=200u64 {
            s.add(&[(t % 17) as u8], 1, t, t).unwrap();
        }
        let grid = s.counter_grid(1000, 200).unwrap();
        let w = s.plan().width as usize;
        let hashed = hash_key(s.key_seed, &[3u8]);
        let est = s.point_query(&[3u8], 1000, 200).unwrap();
        for row in 0..s.plan().depth as usize {
            let col = s.row_hashes[row].index_in(hashed, s.plan().width) as usize;
            assert!(est <= grid[row * w + col]);
        }
    }

    #[test]
    fn inner_product_of_empty_is_zero() {
        let mut a = eh_sketch(1000, 5);
        let b = eh_sketch(1000, 5);
        for t in 1..=50u64 {
            a.add(&[(t % 5) as u8], 1, t, t).unwrap();
        }
        assert_eq!(a.inner_product(&b, 1000, 50).unwrap(), 0);
    }

    #[test]
    fn incompatible_sketches_refuse_to_combine() {
        let a = eh_sketch(1000, 5);
        let b = eh_sketch(1000, 6);
        assert!(matches!(
            a.inner_product(&b, 1000, 50),
            Err(Error::Incompatible(_))
        ));
        assert!(matches!(
            EcmSketch::compose(&[&a, &b], 0.1),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn compose_raises_depth_and_effective_epsilon() {
        let mut a = eh_sketch(1000, 5);
        let mut b = eh_sketch(1000, 5);
        for t in 1..=100u64 {
            a.add(&[1], 1, t, t).unwrap();
            b.add(&[2], 1, t, t).unwrap();
        }
        let eps_prime = a.plan().epsilon_sw;
        let merged = EcmSketch::compose(&[&a, &b], eps_prime).unwrap();
        assert_eq!(merged.merge_depth(), 1);
        assert!(merged.effective_epsilon() > a.effective_epsilon());
    }

    #[test]
    fn envelope_roundtrip_is_bit_exact_for_all_backends() {
        for backend in [
            Backend::ExponentialHistogram,
            Backend::DeterministicWave,
            Backend::RandomizedWave,
        ] {
            let mut s =
                EcmSketch::new(point_plan(backend), 5000, WindowMode::TimeBased, 77).unwrap();
            for t in 1..=300u64 {
                s.add(&[(t % 23) as u8], 1, t * 2, t).unwrap();
            }
            let bytes = s.to_bytes();
            let back = EcmSketch::from_bytes(&bytes).unwrap();
            assert_eq!(back, s, "{backend:?}");
            assert_eq!(back.to_bytes(), bytes, "{backend:?}");
            assert_eq!(
                back.point_query(&[4], 5000, 600).unwrap(),
                s.point_query(&[4], 5000, 600).unwrap()
            );
        }
    }
}
