//! Simulation engine, exhaustive small-instance verifier, and Monte Carlo
//! experiment harness for leader election in pairwise population protocols.
//!
//! The crate ships two protocols: the leader-minion protocol, in which each
//! agent holds a signed bounded value and one leader survives in
//! polylogarithmic parallel time, and a two-state elimination baseline whose
//! convergence is linear in the population size. On top of the protocol
//! rules ([`protocol`]) sit:
//!
//! * [`engine`] — the uniform random pairwise scheduler, with deterministic
//!   replay from a seed, O(1) convergence detection, and an always-on
//!   contender-count monitor;
//! * [`verifier`] — exhaustive reachability checking of the election safety
//!   properties over anonymous configuration vectors on small instances;
//! * [`experiments`] — reproducible sweeps over network sizes with CSV
//!   output, parallel across trials behind the `parallel` feature.

pub mod engine;
pub mod experiments;
pub mod protocol;
pub mod rng;
pub mod verifier;

pub use engine::{
    default_max_steps, run_trial, run_until_converged, run_with_trace, EngineError, Population,
    SimulationOutcome,
};
pub use protocol::{
    Baseline, BaselineState, LeaderMinion, Output, Protocol, ProtocolError, ProtocolKind,
    ProtocolParams, StateValue,
};
pub use rng::Scheduler;
