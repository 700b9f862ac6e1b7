//! Microscopic traffic simulation on arc-length parameterized road networks.
//!
//! Two control modes run over the same network and fleet:
//!
//! * `optimal` - connected automated vehicles register with a per-zone
//!   coordinator when entering a control zone, receive a conflict-zone entry
//!   time, and track a minimum-effort cubic trajectory to meet it.
//! * `baseline` - a psycho-physical car-following model with fixed-time
//!   signals and gap-acceptance yielding.
//!
//! Runs are deterministic: the same scenario, mode, and seed produce
//! byte-identical traces.

pub mod baseline;
pub mod cli;
pub mod coordinator;
pub mod dynamics;
pub mod engine;
pub mod metrics;
pub mod network;
pub mod output;
pub mod planner;
pub mod scenario;
