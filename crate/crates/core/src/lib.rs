//! Asynchronous decentralized event-triggered control with one-bit sensor
//! messages.
//!
//! Each sensor watches one state coordinate and transmits a single sign bit
//! when its local error reaches its share of a global threshold. The
//! controller rebuilds the held state from those bits, and periodically
//! shrinks the threshold geometrically once its state-norm estimate is small
//! enough. The [`engine`] simulates the whole loop deterministically and the
//! [`certificate`] module computes the guarantees it is checked against.

// `!(x > 0.0)` also rejects NaN; index loops walk parallel arrays
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certificate;
pub mod cli;
pub mod config;
pub mod engine;
pub mod linalg;
pub mod plant;
pub mod protocol;
pub mod triggering;
