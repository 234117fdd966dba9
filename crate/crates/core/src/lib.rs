//! Power-constrained sensing-matrix design for compressed sensing over
//! noisy channels.
//!
//! The measurement chain is `y = g·A·(H·x + v) + w` with a `K`-sparse
//! Gaussian source `x`. Designs minimize the ensemble-averaged oracle
//! MMSE (the MSE of the support-aware conditional mean), which lower-bounds
//! the MSE of every decoder. The optimization lifts `A` to its Gram matrix
//! `Q = AᵀA`, solves the convex rank-relaxed problem, and recovers `A` by a
//! rank-`M` eigen-truncation followed by power rescaling.
//!
//! Module map:
//! - [`model`]: system model, supports, source sampling, channel.
//! - [`metrics`]: bounds, transmit power, NMSE and frame diagnostics.
//! - [`sdr`]: relaxed Gram-space objective, gradient, solver, LMI witnesses.
//! - [`designer`]: two-stage design, closed forms and baselines.
//! - [`estimators`]: oracle/exhaustive MMSE, LMMSE, OMP, random-OMP.
//! - [`experiments`]: Monte Carlo sweeps, canned figure configs, outputs.

pub mod designer;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sdr;

pub use error::{Error, Result};
