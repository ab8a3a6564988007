//! Desk-scale demo components: a bag replayer and a synthetic live source
//! feeding a `points` stream, a latest-snapshot server, a
//! transform-and-accumulate map builder, a deterministic labeler, a mock
//! coverage planner, and the quiet-period stop signal. Every component is a
//! thin binary over the functions here, talking only the bus protocol.

pub mod bag;
pub mod boot;
pub mod coverage;
pub mod labeler;
pub mod map;
pub mod raw;
pub mod replay;
pub mod slam;
pub mod stop;
