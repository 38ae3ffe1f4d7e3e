//! Monte Carlo and quadrature laboratory for the Pearcey point process.
//!
//! The crate has three layers:
//!
//! * closed-form scaling laws for the mean and variance of the counting
//!   function and the rigidity guide bands built from them ([`scaling`]);
//! * a Gaussian Hermitian matrix ensemble with an external source whose
//!   rescaled spectra realize the process at finite `n` ([`ensemble`]),
//!   plus the statistics taken over sampled spectra ([`stats`]);
//! * direct contour-integral numerics for the kernel, used as an
//!   ensemble-independent cross-check ([`kernel`]).
//!
//! On top of those sit the artifact layers: run configuration
//! ([`config`]), the parallel experiment pipeline ([`experiment`]), and
//! byte-stable JSON/CSV emission ([`report`]).
//!
//! Everything numerical is generic over the scalar type through
//! [`num::Real`]; the `*64` aliases below fix `f64`, which is what the
//! command-line driver uses.

// Comparisons are deliberately written in the negated form `!(x > 0)` so
// that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod num;
pub mod report;
pub mod scaling;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};

pub type ModelParams64 = scaling::ModelParams<f64>;
pub type RigidityConstants64 = scaling::RigidityConstants<f64>;
pub type AuditReport64 = scaling::AuditReport<f64>;
pub type EnsembleConfig64 = ensemble::EnsembleConfig<f64>;
pub type SpectrumSample64 = ensemble::SpectrumSample<f64>;
pub type StepFunction64 = stats::StepFunction<f64>;
pub type SupStatistic64 = stats::SupStatistic<f64>;
pub type CltSample64 = stats::CltSample<f64>;
pub type QuadratureSpec64 = kernel::QuadratureSpec<f64>;
pub type KernelEstimate64 = kernel::KernelEstimate<f64>;
