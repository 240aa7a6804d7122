//! Distributed threshold monitoring of windowed self-joins, simulated.
//!
//! Each site feeds its local stream into a sketch. After a synchronization
//! every site knows the global estimate grid `e` (the averaged counter
//! grid). Between syncs a site bounds where the current global average can
//! be: its drift vector is `u = e + delta`, with `delta` the counter-wise
//! query over the time since the sync, and the global average is guaranteed
//! to lie in the union of the per-site balls with diameter `[e, u]`. The
//! monitored function `f(x) = min over rows of sum of squared counters`
//! has closed-form extrema over a ball, so a site can locally certify that
//! no threshold crossing is possible; only when a ball straddles the
//! threshold does anyone communicate.
//!
//! Transport is simulated with a logical clock, but the bytes charged are
//! the real serialized frames.

use std::fmt;

use crate::error::{Error, Result};
use crate::sketch::EcmSketch;
use crate::windows::{Backend, EventId, Timestamp, WindowMode};
use crate::wire::{Reader, Writer};

/// What a monitoring run is told to watch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorTask {
    pub sites: u32,
    /// Threshold on the self-join of the averaged counter grid.
    pub threshold: f64,
    /// The single query range being monitored.
    pub range: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub window: u64,
    pub backend: Backend,
    pub seed: u64,
}

/// One arrival routed to a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorEvent {
    pub at: Timestamp,
    pub site: u32,
    pub key: u64,
    pub value: u64,
    pub id: EventId,
}

/// Result of a site-local constraint check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOutcome {
    Safe,
    Violation,
}

#[derive(Debug, Clone)]
struct Baseline {
    /// Averaged global estimate grid, row-major, one entry per counter.
    estimate: Vec<f64>,
    synced_at: Timestamp,
}

/// A monitored stream site: local sketch plus the last synchronized state.
#[derive(Debug, Clone)]
pub struct SiteState {
    id: u32,
    sketch: EcmSketch,
    baseline: Option<Baseline>,
}

impl SiteState {
    pub fn new(id: u32, sketch: EcmSketch) -> SiteState {
        SiteState {
            id,
            sketch,
            baseline: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn sketch(&self) -> &EcmSketch {
        &self.sketch
    }

    pub fn record(&mut self, key: u64, value: u64, at: Timestamp, event: EventId) -> Result<()> {
        self.sketch.add_u64(key, value, at, event)
    }

    /// Counter-wise drift since the last sync: each counter queried over
    /// `(synced_at, now]`, capped at the window.
    fn drift(&self, now: Timestamp) -> Result<Vec<f64>> {
        let baseline = self.baseline.as_ref().ok_or(Error::NotSynchronized)?;
        let since = now.saturating_sub(baseline.synced_at);
        if since == 0 {
            return Ok(vec![0.0; baseline.estimate.len()]);
        }
        let range = since.min(self.sketch.window().window);
        Ok(self
            .sketch
            .counter_grid(range, now)?
            .into_iter()
            .map(|v| v as f64)
            .collect())
    }

    /// The geometric test: per row, a ball centered halfway between the
    /// global estimate and this site's drift vector, with radius half their
    /// distance, bounds every value the row's squared norm can take. A
    /// violation is any row whose ball straddles the threshold.
    pub fn local_check(&self, task: &MonitorTask, now: Timestamp) -> Result<CheckOutcome> {
        let baseline = self.baseline.as_ref().ok_or(Error::NotSynchronized)?;
        let delta = self.drift(now)?;
        let width = self.sketch.plan().width as usize;
        for (row, chunk) in delta.chunks(width).enumerate() {
            let estimate_row = &baseline.estimate[row * width..(row + 1) * width];
            let (lo, hi) = row_ball_extrema(estimate_row, chunk);
            if lo < task.threshold && task.threshold < hi {
                return Ok(CheckOutcome::Violation);
            }
        }
        Ok(CheckOutcome::Safe)
    }
}

/// Extrema of `|x|^2` over the ball with diameter `[e, e + delta]`:
/// `((|kappa| ± alpha)^2` for center `kappa = e + delta/2` and radius
/// `alpha = |delta|/2`, clamped at the origin.
fn row_ball_extrema(estimate: &[f64], delta: &[f64]) -> (f64, f64) {
    let mut center_sq = 0.0;
    let mut radius_sq = 0.0;
    for (e, d) in estimate.iter().zip(delta) {
        let k = e + d / 2.0;
        center_sq += k * k;
        radius_sq += d * d / 4.0;
    }
    let center = center_sq.sqrt();
    let radius = radius_sq.sqrt();
    let lo = (center - radius).max(0.0);
    (lo * lo, (center + radius) * (center + radius))
}

/// Self-join of an averaged grid: minimum over rows of the squared row norm.
pub fn grid_self_join(grid: &[f64], width: usize) -> f64 {
    grid.chunks(width)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Kinds of records in a monitoring event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    /// A site's local ball straddled the threshold.
    Violation,
    /// A site shipped its sketch frame to the coordinator.
    Upload,
    /// The coordinator broadcast the new estimate grid to a site.
    Broadcast,
    /// The oracle's true function value crossed the threshold.
    Crossing,
}

impl RecordKind {
    pub fn label(self) -> &'static str {
        match self {
            RecordKind::Violation => "violation",
            RecordKind::Upload => "upload",
            RecordKind::Broadcast => "broadcast",
            RecordKind::Crossing => "crossing",
        }
    }
}

/// One line of the event log: time, site (`None` for coordinator-wide),
/// kind, bytes moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRecord {
    pub at: Timestamp,
    pub site: Option<u32>,
    pub kind: RecordKind,
    pub bytes: u64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site {
            Some(site) => write!(f, "{}\t{}\t{}\t{}", self.at, site, self.kind.label(), self.bytes),
            None => write!(f, "{}\t-\t{}\t{}", self.at, self.kind.label(), self.bytes),
        }
    }
}

/// Per-event ground-truth trace for verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventTrace {
    pub at: Timestamp,
    pub site: u32,
    /// The receiving site's check flagged a violation at this event.
    pub violation: bool,
    /// A synchronization completed at this event.
    pub synced: bool,
    /// Exact self-join of the averaged union stream at this event.
    pub true_value: f64,
    /// Self-join of the global estimate grid at the last sync.
    pub baseline_value: f64,
}

/// Everything a monitoring run produces.
#[derive(Debug, Clone)]
pub struct MonitorLog {
    pub records: Vec<LogRecord>,
    pub trace: Vec<EventTrace>,
    pub sync_count: u32,
    pub violation_count: u32,
    pub crossing_count: u32,
    /// Bytes moved by the geometric protocol.
    pub geo_bytes: u64,
    /// Bytes a naive strategy would move by shipping every site's sketch
    /// frame on every arrival.
    pub naive_bytes: u64,
}

impl MonitorLog {
    pub fn render_records(&self) -> String {
        let mut out = String::from("time\tsite\tkind\tbytes\n");
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

/// The broadcast frame carrying the averaged estimate grid.
pub fn encode_grid(at: Timestamp, grid: &[f64]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(b"ECMG");
    w.u64(at);
    w.u32(grid.len() as u32);
    for &v in grid {
        w.f64(v);
    }
    w.into_bytes()
}

/// Inverse of [`encode_grid`].
pub fn decode_grid(bytes: &[u8]) -> Result<(Timestamp, Vec<f64>)> {
    let mut r = Reader::new(bytes);
    r.magic(b"ECMG")?;
    let at = r.u64()?;
    let len = r.u32()? as usize;
    let mut grid = Vec::with_capacity(len);
    for _ in 0..len {
        grid.push(r.f64()?);
    }
    r.expect_end()?;
    Ok((at, grid))
}

/// Full synchronization: every site ships its sketch, the coordinator
/// composes them order-preservingly, extracts the averaged estimate grid
/// for the task range and broadcasts it back. Returns the new grid and the
/// log records of the exchange.
pub fn synchronize(
    sites: &mut [SiteState],
    task: &MonitorTask,
    now: Timestamp,
) -> Result<(Vec<f64>, Vec<LogRecord>)> {
    let mut records = Vec::new();
    let mut frames = Vec::with_capacity(sites.len());
    for site in sites.iter() {
        let frame = site.sketch.to_bytes();
        records.push(LogRecord {
            at: now,
            site: Some(site.id),
            kind: RecordKind::Upload,
            bytes: frame.len() as u64,
        });
        frames.push(frame);
    }
    let uploaded: Vec<EcmSketch> = frames
        .iter()
        .map(|f| EcmSketch::from_bytes(f))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EcmSketch> = uploaded.iter().collect();
    let eps_prime = sites[0].sketch.plan().epsilon_sw;
    let composed = EcmSketch::compose(&refs, eps_prime)?;
    let n = sites.len() as f64;
    let grid: Vec<f64> = composed
        .counter_grid(task.range, now)?
        .into_iter()
        .map(|v| v as f64 / n)
        .collect();
    let broadcast = encode_grid(now, &grid);
    for site in sites.iter_mut() {
        records.push(LogRecord {
            at: now,
            site: Some(site.id),
            kind: RecordKind::Broadcast,
            bytes: broadcast.len() as u64,
        });
        site.baseline = Some(Baseline {
            estimate: grid.clone(),
            synced_at: now,
        });
    }
    Ok((grid, records))
}

/// Replays timestamp-ordered events against `n` monitored sites, checking
/// the local constraint after every arrival and running a full
/// synchronization on any violation. The returned log carries the wire
/// records, a ground-truth trace and the byte comparison against naive
/// per-event sketch shipping.
pub fn run_monitor(events: &[MonitorEvent], task: &MonitorTask) -> Result<MonitorLog> {
    use crate::oracle::ExactWindowStore;
    use crate::plan::{QueryProfile, SketchPlan};

    if task.sites == 0 {
        return Err(Error::InvalidParameter("need at least one site".into()));
    }
    let plan = SketchPlan::new(task.epsilon, task.delta, QueryProfile::Point, task.backend)?;
    let mut sites: Vec<SiteState> = (0..task.sites)
        .map(|id| {
            EcmSketch::new(plan, task.window, WindowMode::TimeBased, task.seed)
                .map(|sketch| SiteState::new(id, sketch))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut union = ExactWindowStore::new(task.window, WindowMode::TimeBased);
    let n = f64::from(task.sites);
    let width = plan.width as usize;

    let mut log = MonitorLog {
        records: Vec::new(),
        trace: Vec::with_capacity(events.len()),
        sync_count: 0,
        violation_count: 0,
        crossing_count: 0,
        geo_bytes: 0,
        naive_bytes: 0,
    };

    let sync = |sites: &mut [SiteState], log: &mut MonitorLog, now| -> Result<Vec<f64>> {
        let (grid, records) = synchronize(sites, task, now)?;
        log.geo_bytes += records.iter().map(|r| r.bytes).sum::<u64>();
        log.records.extend(records);
        log.sync_count += 1;
        Ok(grid)
    };

    // Initialization round: everyone learns the (empty) global estimate.
    let mut baseline_value = grid_self_join(&sync(&mut sites, &mut log, 0)?, width);
    let mut last_truth = 0.0f64;

    let mut last_at = 0;
    for event in events {
        if event.at < last_at {
            return Err(Error::NonMonotonicTimestamp {
                at: event.at,
                last: last_at,
            });
        }
        last_at = event.at;
        if event.site >= task.sites {
            return Err(Error::InvalidParameter(format!(
                "event for site {} of {}",
                event.site, task.sites
            )));
        }
        let site = &mut sites[event.site as usize];
        site.record(event.key, event.value, event.at, event.id)?;
        union.push(event.at, event.key, event.value);
        log.naive_bytes += site.sketch.to_bytes().len() as u64;

        let outcome = sites[event.site as usize].local_check(task, event.at)?;
        let violation = outcome == CheckOutcome::Violation;
        let mut synced = false;
        if violation {
            log.violation_count += 1;
            log.records.push(LogRecord {
                at: event.at,
                site: Some(event.site),
                kind: RecordKind::Violation,
                bytes: 0,
            });
            baseline_value = grid_self_join(&sync(&mut sites, &mut log, event.at)?, width);
            synced = true;
        }

        let truth = union.self_join(task.range, event.at)? as f64 / (n * n);
        if (last_truth <= task.threshold) != (truth <= task.threshold) {
            log.crossing_count += 1;
            log.records.push(LogRecord {
                at: event.at,
                site: None,
                kind: RecordKind::Crossing,
                bytes: 0,
            });
        }
        last_truth = truth;

        log.trace.push(EventTrace {
            at: event.at,
            site: event.site,
            violation,
            synced,
            true_value: truth,
            baseline_value,
        });
    }
    Ok(log)
}

/// A monitoring scenario as read from a key-value config file: the task
/// plus a stream recipe the harness turns into events.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub task: MonitorTask,
    /// Stream generator spec, e.g. `zipf:1.1,256,200` or `uniform:64,200`.
    pub generator: String,
}

/// Parses `key = value` lines (`#` starts a comment). Required keys:
/// `sites`, `threshold`, `range`, `epsilon`, `delta`, `generator`, `seed`;
/// optional: `window` (default 1000000), `backend` (default `eh`).
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut sites = None;
    let mut threshold = None;
    let mut range = None;
    let mut epsilon = None;
    let mut delta = None;
    let mut window = 1_000_000u64;
    let mut seed = None;
    let mut backend = Backend::ExponentialHistogram;
    let mut generator = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected key = value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::Format(format!("line {}: bad {what}: {value}", lineno + 1));
        match key {
            "sites" | "n" => sites = Some(value.parse().map_err(|_| bad("site count"))?),
            "threshold" | "t" => threshold = Some(value.parse().map_err(|_| bad("threshold"))?),
            "range" | "r" => range = Some(value.parse().map_err(|_| bad("range"))?),
            "epsilon" | "eps" => epsilon = Some(value.parse().map_err(|_| bad("epsilon"))?),
            "delta" => delta = Some(value.parse().map_err(|_| bad("delta"))?),
            "window" => window = value.parse().map_err(|_| bad("window"))?,
            "seed" => seed = Some(value.parse().map_err(|_| bad("seed"))?),
            "backend" => {
                backend = match value {
                    "eh" => Backend::ExponentialHistogram,
                    "dw" => Backend::DeterministicWave,
                    "rw" => Backend::RandomizedWave,
                    _ => return Err(bad("backend")),
                }
            }
            "generator" | "stream" => generator = Some(value.to_string()),
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown key {other}",
                    lineno + 1
                )))
            }
        }
    }

    let missing = |what: &str| Error::Format(format!("scenario is missing `{what}`"));
    Ok(Scenario {
        task: MonitorTask {
            sites: sites.ok_or_else(|| missing("sites"))?,
            threshold: threshold.ok_or_else(|| missing("threshold"))?,
            range: range.ok_or_else(|| missing("range"))?,
            epsilon: epsilon.ok_or_else(|| missing("epsilon"))?,
            delta: delta.ok_or_else(|| missing("delta"))?,
            window,
            backend,
            seed: seed.ok_or_else(|| missing("seed"))?,
        },
        generator: generator.ok_or_else(|| missing("generator"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{QueryProfile, SketchPlan};

    fn task(sites: u32, threshold: f64) -> MonitorTask {
        MonitorTask {
            sites,
            threshold,
            range: 1000,
            epsilon: 0.2,
            delta: 0.2,
            window: 1000,
            backend: Backend::ExponentialHistogram,
            seed: 42,
        }
    }

    fn fresh_sites(task: &MonitorTask) -> Vec<SiteState> {
        let plan =
            SketchPlan::new(task.epsilon, task.delta, QueryProfile::Point, task.backend).unwrap();
        (0..task.sites)
            .map(|id| {
                SiteState::new(
                    id,
                    EcmSketch::new(plan, task.window, WindowMode::TimeBased, task.seed).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn ball_extrema_match_hand_geometry() {
        // e = 0, u with |u| = 2: the ball through the origin spans [0, 4].
        let estimate = vec![0.0, 0.0];
        let delta = vec![2.0, 0.0];
        let (lo, hi) = row_ball_extrema(&estimate, &delta);
        assert_eq!((lo, hi), (0.0, 4.0));
    }

    #[test]
    fn zero_drift_ball_is_degenerate() {
        let estimate = vec![1.0, 2.0];
        let delta = vec![0.0, 0.0];
        let (lo, hi) = row_ball_extrema(&estimate, &delta);
        assert!((lo - 5.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
    }

    #[test]
    fn extrema_bound_random_points_inside_the_ball() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dim = 8;
        for _ in 0..20 {
            let estimate: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let delta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (lo, hi) = row_ball_extrema(&estimate, &delta);
            let kappa: Vec<f64> = estimate
                .iter()
                .zip(&delta)
                .map(|(e, d)| e + d / 2.0)
                .collect();
            let alpha = delta.iter().map(|d| d * d / 4.0).sum::<f64>().sqrt();
            for _ in 0..500 {
                // Random point in the ball: random direction, random radius.
                let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let scale = alpha * rng.gen_range(0.0..1.0) / norm;
                let value: f64 = kappa
                    .iter()
                    .zip(&dir)
                    .map(|(k, d)| (k + d * scale) * (k + d * scale))
                    .sum();
                assert!(value <= hi + 1e-9 && value >= lo - 1e-9);
            }
        }
    }

    #[test]
    fn single_site_estimate_equals_its_own_extraction() {
        let task = task(1, 100.0);
        let mut sites = fresh_sites(&task);
        for t in 1..=50u64 {
            sites[0].record(t % 5, 1, t, t).unwrap();
        }
        let (grid, _) = synchronize(&mut sites, &task, 50).unwrap();
        let own: Vec<f64> = sites[0]
            .sketch
            .counter_grid(task.range, 50)
            .unwrap()
            .into_iter()
            .map(|v| v as f64)
            .collect();
        // n = 1 and a singleton compose re-simulates the histograms, so the
        // extraction stays within the combined merge error of the site's own.
        let eps = sites[0].sketch.plan().epsilon_sw;
        let bound = 2.0 * eps + eps * eps;
        for (a, b) in grid.iter().zip(&own) {
            assert!((a - b).abs() <= bound * b.max(1.0) + 1e-9);
        }
    }

    #[test]
    fn all_empty_sites_synchronize_to_zero() {
        let task = task(3, 1.0);
        let mut sites = fresh_sites(&task);
        let (grid, _) = synchronize(&mut sites, &task, 0).unwrap();
        assert!(grid.iter().all(|&v| v == 0.0));
        for site in &sites {
            assert_eq!(site.local_check(&task, 0).unwrap(), CheckOutcome::Safe);
        }
    }

    #[test]
    fn unsynchronized_site_cannot_check() {
        let task = task(2, 1.0);
        let sites = fresh_sites(&task);
        assert_eq!(
            sites[0].local_check(&task, 5),
            Err(Error::NotSynchronized)
        );
    }

    #[test]
    fn checks_stay_safe_without_arrivals() {
        let task = task(2, 50.0);
        let mut sites = fresh_sites(&task);
        for t in 1..=30u64 {
            sites[(t % 2) as usize].record(7, 1, t, t).unwrap();
        }
        synchronize(&mut sites, &task, 30).unwrap();
        for now in 31..=200 {
            for site in &sites {
                assert_eq!(site.local_check(&task, now).unwrap(), CheckOutcome::Safe);
            }
        }
    }

    #[test]
    fn grid_broadcast_roundtrips() {
        let grid = vec![1.5, 0.0, 3.25];
        let bytes = encode_grid(77, &grid);
        assert_eq!(decode_grid(&bytes).unwrap(), (77, grid));
    }

    #[test]
    fn scenario_parsing_accepts_comments_and_aliases() {
        let text = "
            # a scenario
            n = 4
            t = 12.5
            r = 500
            eps = 0.1
            delta = 0.1
            seed = 7
            generator = zipf:1.2,64,200
        ";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.task.sites, 4);
        assert_eq!(s.task.threshold, 12.5);
        assert_eq!(s.task.window, 1_000_000);
        assert_eq!(s.generator, "zipf:1.2,64,200");
        assert!(parse_scenario("bogus = 1").is_err());
        assert!(parse_scenario("n = 4").is_err());
    }
}
