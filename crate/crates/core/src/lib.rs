//! Detection-directed recovery of sparse signals from noisy measurements
//! taken through sparse-binary sensing matrices.
//!
//! The pipeline has three stages:
//!
//! 1. [`bp`]: belief propagation with density messages sampled on a fixed
//!    grid ([`density`]), producing a marginal posterior per signal element.
//! 2. [`detector`]: a Bayesian hypothesis test on each marginal decides
//!    whether the element is on the support. A peak-location (MAP) detector
//!    is provided as the baseline.
//! 3. [`estimator`]: linear MMSE estimation of the values restricted to the
//!    detected support.
//!
//! [`model`] generates problem instances and [`harness`] composes the
//! pipelines into Monte-Carlo SNR sweeps.

pub mod bp;
pub mod density;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
