//! Nonlinear vehicular platoons with communication range `r`.
//!
//! The crate simulates the closed loop of a constant-spacing platoon in
//! position/velocity coordinates as well as in the singularly perturbed
//! spacing/velocity-error coordinates, certifies contraction of both
//! subsystems with matrix measures, and checks the resulting disturbance
//! envelopes against simulated trajectories.
//!
//! Vehicles are indexed from zero in code: follower `i` (0-based) is
//! vehicle `i + 1` of the platoon, the leader is not part of any state vector
//! except the position/velocity frame, where it occupies slot 0.

pub mod bounds;
pub mod certificates;
pub mod config;
pub mod dynamics;
mod error;
pub mod experiment;
pub mod formation;
pub mod integrate;
pub mod scenario;
pub mod signals;

pub use error::{Error, Result};
