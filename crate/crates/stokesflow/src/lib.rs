//! Method of reflections for Stokes flow around rigid spheres.
//!
//! This crate solves the mobility problem for a finite collection of rigid,
//! force- and torque-free spheres immersed in a background Stokes flow. The
//! solver follows the method of reflections: starting from the ambient flow,
//! each sweep measures the straining motion every particle still feels,
//! radiates an equal-and-opposite correction from each particle
//! simultaneously, and repeats. With relaxation the sweep becomes
//! `v_{k+1} = v_k - gamma * sum_i Q_i v_k`, where `Q_i` projects onto the
//! decaying exterior solutions sourced by particle `i`.
//!
//! The crate is organized along the pipeline:
//!
//! - [`geometry`]: particle configurations, separation metrics
//!   (`d_min`, `phi0`, `theta_max`, `lambda_q`), and deterministic
//!   lattice / Poisson-disk generators.
//! - [`fields`]: closed-form kernels (stokeslet, dipole, quadrupole-type
//!   collocation basis) and the composite [`fields::FlowField`] with exact
//!   analytic velocity, gradient, and strain evaluation.
//! - [`moments`]: sphere/ball quadrature and the moment projections: rigid
//!   part, ball-averaged strain (the dipole coefficient), and the
//!   least-squares collocation refinement.
//! - [`reflections`]: the iteration engine with residual tracking,
//!   contraction-rate fitting, and divergence detection.
//! - [`analysis`]: instruments that measure what the solver claims:
//!   contraction-rate sweeps against `phi0`, spectral bounds of the dipole
//!   interaction operator, far-field decay slopes, boundary-average
//!   superconvergence, and the dilute effective-viscosity estimate.
//!
//! Everything is deterministic: fixed summation order with compensated
//! accumulation, seeded generators, and thread-count-independent parallelism.

pub mod analysis;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod moments;
pub mod reflections;

pub(crate) mod util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
