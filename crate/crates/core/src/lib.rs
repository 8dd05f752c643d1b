//! Deterministic discrete-time simulator of federated edge learning over
//! LEO mega-constellations.
//!
//! The crate is organized around the moving parts of one training round:
//! [`constellation`] propagates Walker-Delta orbits and decides which
//! ground-to-satellite links are feasible, [`channel`] turns geometry into
//! link rates, [`ringreduce`] aggregates models inside an orbit over the
//! full-duplex laser ring, [`flowsched`] schedules the multi-station model
//! download as a per-slot max-flow problem, [`learnkit`] provides the
//! synthetic federated task and local SGD, [`orchestrator`] ties them into
//! the full algorithms with a per-round delay ledger, and [`analysis`]
//! evaluates the stepsize rule and convergence-bound terms.

pub mod analysis;
pub mod channel;
pub mod constellation;
pub mod error;
pub mod flowsched;
pub mod learnkit;
pub mod orchestrator;
pub mod ringreduce;

pub use error::{Result, SimError};
