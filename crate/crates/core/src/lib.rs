//! Optimizer-aware neural scaling laws.
//!
//! The crate covers the full loop from raw training-run records to fitted
//! laws and their diagnostics:
//!
//! - [`run_store`]: ingestion, validation and filtering of run records, and
//!   conversion to log-space fit points.
//! - [`law_models`]: the Chinchilla law, the shared-exponent law with
//!   per-optimizer rescaling factors (data or compute axis), and the
//!   data-efficiency law, with analytic gradients.
//! - [`fitter`]: a bounded, Huber-robust Levenberg-Marquardt solver and the
//!   independent / reference-anchored fitting procedures built on it.
//! - [`validation`]: leave-one-out cross-validation, parameter-degeneracy
//!   diagnostics and the extrapolation benchmark.
//! - [`spectral_sim`]: gradient descent on power-law quadratics, the exact
//!   approximation/optimization error split and its asymptotics. Used as a
//!   ground-truth generator for the fitter.

pub mod error;
pub mod fitter;
pub mod law_models;
pub mod run_store;
pub mod spectral_sim;
pub mod validation;

pub use error::{Error, ErrorClass, Result};

/// Version stamped into every serialized result.
pub const SCHEMA_VERSION: u32 = 1;
