//! bvlens: measure prediction bias and variance of trained predictors,
//! split total prediction variance into optimization-driven and
//! sampling-driven parts, and cross-check the linear-model theory that
//! predicts how those parts scale with model size.
//!
//! The crate is organized as:
//!
//! - [`numkit`] — dense matrices, SVD/pseudoinverse, seeded random streams
//! - [`datasets`] — sinusoid regression data, IDX image ingestion, resampling
//! - [`nnet`] — from-scratch fully connected networks and their trainer
//! - [`estimators`] — bias/variance estimators over (replicate x seed) grids
//! - [`lintheory`] — fixed-design linear regression closed forms and MC checks
//! - [`bounds`] — executable inequality checks (4x risk bound, concentration)
//! - [`runner`] — experiment configuration, sweeps, CSV/JSON output

pub mod bounds;
pub mod datasets;
pub mod estimators;
pub mod lintheory;
pub mod nnet;
pub mod numkit;
pub mod runner;
