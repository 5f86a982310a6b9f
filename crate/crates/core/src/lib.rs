//! Arbitrage geometry for Itô market models and option pricing under the
//! resulting nonlinear Black-Scholes equation.
//!
//! The crate is organised by subsystem:
//!
//! * [`gauges`]: deflators, term structures, cashflow intensities, gauge
//!   transforms and portfolio aggregation.
//! * [`geometry`]: range projections, kernel bases, the arbitrage measure ρ,
//!   the zero-curvature residual and the curvature spread.
//! * [`pricing`]: perturbation-series solution of the nonlinear pricing PDE
//!   (heat-kernel Duhamel integrals).
//! * [`fdsolver`]: an independent finite-difference solver for the same PDE.
//! * [`simulate`]: Monte Carlo ensembles and Nelson-derivative estimators.
//! * [`cli`]: configuration schema and the `gat` command implementations.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too;
// index loops mirror the stencil and matrix notation of the numerics.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classical;
pub mod cli;
pub mod config;
pub mod error;
pub mod fdsolver;
pub mod gauges;
pub mod geometry;
pub mod pricing;
pub mod simulate;
pub mod surface;

pub use error::{Error, Result};
