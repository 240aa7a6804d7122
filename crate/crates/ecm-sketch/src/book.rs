// The book chapters under book/src/ contain runnable examples. Including
// them as doc comments here makes `cargo test --doc` compile and run every
// code block, so the book can never drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/window-counters.md")]
mod window_counters {}

#[doc = include_str!("../../../book/src/the-sketch.md")]
mod the_sketch {}

#[doc = include_str!("../../../book/src/merging.md")]
mod merging {}

#[doc = include_str!("../../../book/src/heavy-hitters.md")]
mod heavy_hitters {}

#[doc = include_str!("../../../book/src/monitoring.md")]
mod monitoring {}

#[doc = include_str!("../../../book/src/harness.md")]
mod harness {}
