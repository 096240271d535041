//! A deep ReLU network training laboratory.
//!
//! The crate implements an `L`-hidden-layer ReLU network with He-style
//! Gaussian initialization, full-batch and minibatch gradient descent on the
//! square loss, and a set of measurements that compare what training actually
//! does against the rate shapes predicted by over-parameterization theory:
//! gradient norm lower/upper bounds, weight drift from initialization,
//! activation-pattern stability, linear convergence, the two-layer NTK Gram
//! matrix, and the "gradient region" geometry behind the gradient lower bound.
//!
//! All arithmetic is `f64` with a fixed reduction order,
//! so a run is bit-reproducible from its seed.

pub mod bounds;
pub mod data;
pub mod diagnostics;
mod error;
pub mod experiments;
pub mod gram;
mod nan_json;
pub mod network;
pub mod numerics;
pub mod regions;
pub mod trainer;

pub use error::{Error, Result};
