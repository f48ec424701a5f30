//! Private populous mean estimation.
//!
//! A generic reduction from non-private to differentially private estimation:
//! split the data into chunks, run a non-private estimator on each, test
//! privately whether most chunk estimates agree, and release a masked
//! weighted average of the agreeing ones. The crate provides the reduction,
//! the masking mechanisms it needs (truncated Laplace thresholding, Gaussian
//! and covariance masks), the composed private estimators for Gaussians, and
//! Monte Carlo auditing tools.

pub mod audit;
pub mod constants;
pub mod error;
pub mod estimators;
pub mod gauss;
pub mod mechanisms;
pub mod ppme;
pub mod rng;
pub mod semimetric;

pub use error::{Error, Result};
pub use gauss::{GaussianModel, PsdMatrix, SampleSet};
