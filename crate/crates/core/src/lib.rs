//! Manifold-learning normalizing flows.
//!
//! The crate is organized bottom-up:
//!
//! - [`ndiff`]: reverse-mode differentiation over dense matrices, with forward
//!   tangents so Jacobian columns of transforms remain differentiable.
//! - [`transforms`]: invertible layers (spline and affine couplings,
//!   permutations, LU-linear) plus zero padding and projection.
//! - [`models`]: ambient flow, flow on a prescribed manifold, PIE, M-flow and
//!   Me-flow with exact densities, projection and sampling.
//! - [`training`]: losses, Sinkhorn divergence, AdamW, and the training
//!   schedules (simultaneous, manifold/density, optimal transport).
//! - [`datasets`]: synthetic data with known ground truth.
//! - [`eval`]: metrics and inference tools (MCMC, MMD, AUC, KDE, quadrature).

pub mod datasets;
pub mod error;
pub mod eval;
pub mod models;
pub mod ndiff;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
