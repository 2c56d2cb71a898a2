//! Revealed-preference analysis for probe/response data.
//!
//! Given observations `(p_t, x_t)` of probes and responses under budget
//! constraints, this crate answers, without assuming any functional form:
//!
//! - is the data consistent with maximization of a concave monotone utility
//!   ([`garp`], [`afriat`]), and if so, what does a rationalizing utility
//!   look like and what does it predict for new probes?
//! - if consistency fails, is the data instead explained by a utility that
//!   jump-changes by a linear term `α'x` at an unknown observation
//!   ([`changepoint`]), and what are the change index and the smallest such
//!   perturbation?
//! - when responses are measured with additive Gaussian noise, how much
//!   adjustment does the data need, where is the change point, and should a
//!   hypothesis test accept maximization at a given significance ([`noisy`])?
//! - for very high-dimensional probes, can the consistency check run in a
//!   randomly projected low-dimensional space instead ([`jl`])?
//!
//! The [`sim`] module generates synthetic maximizer data with a known change
//! point and provides a fully informed CUSUM baseline plus an ROC harness for
//! benchmarking the detectors against it.

pub mod afriat;
pub mod changepoint;
pub mod core;
pub mod garp;
pub mod jl;
pub mod lpqp;
pub mod noisy;
pub mod sim;
mod util;

pub use crate::core::{
    AfriatCertificate, ChangePointCertificate, CoreError, Dataset, Piece,
    PiecewiseLinearUtility,
};
