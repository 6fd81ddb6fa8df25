//! Federated edge learning over fading uplinks with probabilistic device
//! scheduling.
//!
//! The crate couples a strongly convex learning problem with a simulated
//! Rayleigh-fading uplink and compares scheduling policies by the simulated
//! communication time they need to reach a target loss gap. The central
//! policy ([`scheduler::ctm_policy`]) trades the expected number of remaining
//! rounds against the current round's upload latency in closed form.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod harness;
pub mod learning;
pub mod oracle;
pub mod quadrature;
pub mod scheduler;
pub mod simulator;

pub use channel::{ChannelRealization, CommParams, DeviceProfile, LinkState};
pub use error::{Error, Result};
pub use learning::{GradientSet, LearningTask, StepSchedule, Vector};
pub use scheduler::{BoundParams, PolicyKind, SchedulingDistribution};
pub use simulator::{RoundLog, RunResult, RunStatus, SimConfig, Simulation};
