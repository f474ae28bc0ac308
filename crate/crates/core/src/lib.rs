//! Monte Carlo estimators for the stochastic Lagrangian representation of
//! three-dimensional vorticity.
//!
//! The crate is organised bottom-up:
//!
//! * [`rng`] and [`kernel`] simulate Brownian increments, Lagrangian paths,
//!   deformation matrices, Girsanov weights and flow Jacobians.
//! * [`feynman_kac`] evaluates representation formulas for linear parabolic
//!   systems coupled through their zero-order term.
//! * [`potential`] holds the probabilistic Newtonian potential, its
//!   Bismut–Elworthy derivatives and the probabilistic Biot–Savart law.
//! * [`fields`] provides analytic and grid-backed vector fields together with
//!   norm estimators.
//! * [`ns_solver`] composes the vorticity representation map with the
//!   Biot–Savart map and runs the local-in-time fixed point.
//! * [`cli_io`] ingests run configurations, owns the deterministic oracles
//!   and writes result tables.

pub mod cli_io;
pub mod error;
pub mod feynman_kac;
pub mod fields;
pub mod kernel;
pub mod ns_solver;
pub mod potential;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use rng::BrownianDriver;
pub use stats::{MCEstimate, SampleSet};

/// Points and vectors in physical space.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 real matrices (velocity gradients, deformation matrices).
pub type Mat3 = nalgebra::Matrix3<f64>;
