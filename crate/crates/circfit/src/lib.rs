//! Nonparametric regression for circular responses with Euclidean
//! covariates.
//!
//! The estimator smooths the sine and cosine of the response with local
//! polynomial weights and recombines the two fits through the
//! four-quadrant arctangent, yielding a mean direction at any covariate
//! point. The crate provides:
//!
//! - [`estimator`]: observation sets, circular fits, and pointwise
//!   prediction, on top of the real-valued machinery in [`localpoly`];
//! - [`bandwidth`]: cross-validation selection (scalar, diagonal, or full
//!   matrix) and local asymptotic mean squared error with its plug-in
//!   optimal bandwidth;
//! - [`simulate`] and [`rates`]: a replicated Monte Carlo study driver
//!   with circular error metrics, and convergence-rate probes;
//! - [`dataset`], [`grid`], [`cli`]: CSV ingestion, prediction-grid
//!   filtering, and the `circfit` command-line tool.
//!
//! The `examples/` directory walks through each capability with runnable
//! programs.

pub mod angle;
pub mod bandwidth;
pub mod cli;
pub mod dataset;
mod error;
pub mod estimator;
pub mod grid;
pub mod kernel;
mod linalg;
pub mod localpoly;
pub mod rates;
pub mod simulate;

pub use error::Error;
