//! Deterministic discrete-event simulator and protocol library for
//! software-defined control of low-power wireless meshes over synchronous
//! flooding.
//!
//! The crate is layered bottom-up:
//!
//! - [`timing`]: slot decomposition, flood/phase durations and the analytic
//!   opportunity bounds.
//! - [`medium`]: topology, path loss, and concurrent-transmission resolution
//!   (same-data combining and capture).
//! - [`flood`]: the back-to-back synchronous flood primitive, relay-counter
//!   synchronization and per-slot channel hopping.
//! - [`apb`]: phases, phase schedules and the schedule executor.
//! - [`control`]: controller and node state machines, epochs, flowtables and
//!   association.
//! - [`harness`]: scenario configuration, metrics, CSV emission and sweeps.

pub mod apb;
pub mod control;
mod error;
pub mod flood;
pub mod harness;
pub mod medium;
pub mod rng;
pub mod sim;
pub mod timing;
pub mod trace;

pub use error::{Error, Result};

/// Simulated time and durations, in microseconds.
pub type Micros = u64;

/// Dense node identifier; node `i` maps to bit `i` of every flag bitmap.
pub type NodeId = u16;
