//! Real-time force identification and virtual sensing for structural vibration.
//!
//! The offline stage builds a finite-element model, reduces it with a hybrid
//! condensation/component-mode transformation and reorders the reduced DOFs
//! into measured and unmeasured blocks. The online stage runs a modified
//! Newmark-β integrator that identifies the forces acting at the measured
//! DOFs from a handful of displacement or acceleration channels and, with
//! them, reconstructs the response of every other DOF.

pub mod akf;
pub mod error;
pub mod identify;
pub mod matrix_market;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod partition;
pub mod regularize;
pub mod rom;
pub mod signals;

pub use error::{Error, Result};
