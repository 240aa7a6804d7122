//! Count-Min sketches whose counters are sliding-window synopses.
//!
//! A classic Count-Min sketch summarizes the full history of a stream. The
//! structures in this crate replace each integer counter with a small
//! sliding-window synopsis, so that point queries, inner products and
//! self-joins can be answered over any suffix of the last `N` time units (or
//! arrivals), with an error bound that combines the hashing error and the
//! window-approximation error.
//!
//! The crate has five layers:
//!
//! * [`windows`] — the three window counters (exponential histogram,
//!   deterministic wave, randomized wave) and their order-preserving merges;
//! * [`EcmSketch`] — the `w x d` grid of window counters with parameter
//!   planning and composition;
//! * [`heavy`] — dyadic stacks of sketches for heavy hitters and range
//!   counts;
//! * [`monitor`] — simulated distributed threshold monitoring of self-join
//!   queries with the geometric method;
//! * [`oracle`] — a brute-force ground truth everything is verified against.
//!
//! The book under `book/` walks through the concepts; its code examples are
//! compiled and run as this crate's doc-tests.

pub mod error;
pub mod hash;
pub mod heavy;
pub mod monitor;
pub mod oracle;
pub mod plan;
pub mod sketch;
pub mod wire;
pub mod windows;

mod book;

pub use error::{Error, Result};
pub use heavy::{DyadicConfig, DyadicStack, Threshold};
pub use monitor::{MonitorEvent, MonitorLog, MonitorTask, SiteState};
pub use oracle::ExactWindowStore;
pub use plan::{QueryProfile, SketchPlan};
pub use sketch::{EcmSketch, MemoryReport};
pub use windows::{
    epsilon_for_merge_depth, merged_epsilon, Backend, DeterministicWave, EventId,
    ExponentialHistogram, RandomizedWave, Synopsis, Timestamp, WindowConfig, WindowMode,
};
