//! Simulation, geometric tracking control and Lie-group extended Kalman
//! filtering for soft robotic arms modelled as Cosserat rods.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: SO(3) maps (hat/vee, exp/log, attitude errors).
//! - [`rod`]: rod parameters, grid-sampled state, strains and the reduced PDE right-hand side.
//! - [`discretize`]: finite-difference stencils and manifold-aware explicit stepping.
//! - [`control`]: tracking errors, feedforward cancellation, PD laws, feasibility and Lyapunov checks.
//! - [`estimate`]: linearized operator assembly, Riccati propagation and the EKF step.
//! - [`harness`]: run configuration, swing trajectory, closed-loop runs and CSV output.
//!
//! Runnable programs for each capability live under `examples/`.

pub mod control;
pub mod discretize;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod harness;
pub mod rod;
pub mod sparse;

pub use error::{Error, Result};
