//! Error type shared by every structure in the crate.

use thiserror::Error;

/// Errors reported by sliding-window counters, sketches and their merges.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An insertion arrived with a timestamp older than the last one seen.
    #[error("non-monotonic timestamp: {at} arrived after {last}")]
    NonMonotonicTimestamp { at: u64, last: u64 },

    /// An insertion or query used a zero count/value where one is required.
    #[error("count must be at least 1")]
    ZeroCount,

    /// A query range was zero or exceeded the configured window length.
    #[error("query range {range} outside (0, {window}]")]
    RangeOutsideWindow { range: u64, window: u64 },

    /// More arrivals landed in one window than the structure was sized for.
    #[error("arrivals exceed the configured per-window capacity {capacity}")]
    CapacityExceeded { capacity: u64 },

    /// A merge was requested for synopses whose model cannot support it.
    #[error("unsupported merge: {0}")]
    UnsupportedMerge(&'static str),

    /// Merge inputs disagree on configuration (window, error, seeds, ...).
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// Invalid construction parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A key fell outside the declared universe of a dyadic structure.
    #[error("key {key} outside universe of size {universe}")]
    KeyOutsideUniverse { key: u64, universe: u64 },

    /// A monitoring site was queried before its first synchronization.
    #[error("site has never been synchronized")]
    NotSynchronized,

    /// A serialized frame could not be decoded.
    #[error("malformed frame: {0}")]
    Format(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
