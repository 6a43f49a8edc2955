//! Simulation and optimal control of single-spot pulsed laser welding.
//!
//! The forward model is an axisymmetric quasilinear heat equation discretized
//! with P1 finite elements and a θ-scheme in time. Laser power profiles are
//! optimized by projected gradient descent using exact discrete adjoints.

// `!(x > 0.0)` deliberately rejects NaN, and the element kernels index
// small fixed arrays in parallel.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod banded;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod material;
pub mod mesh;
pub mod objective;
pub mod optimizer;

pub use error::{Error, Result};
