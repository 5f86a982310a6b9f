//! Perturbation-series pricing of a European call under the nonlinear
//! Black-Scholes equation
//!
//! ```text
//! Φ_t + ½σ²X²Φ_xx = ρ √(Φ² + X²Φ_x²)
//! ```
//!
//! for the discounted price `Φ(t, X)`. With `x = K e^y`,
//! `τ = σ²(T − t)/2` and `Φ = K e^{y/2 − τ/4} u` the equation becomes a heat
//! equation with a small source, solved to second order in `ρ` by Duhamel
//! integrals: `u ≈ u₀ ± ρU₁ + ρ²U₂`.

pub mod adjudication;
pub mod consistency;
pub mod duhamel;
pub mod kernel;
pub mod nonlinear;
pub mod quadrature;
pub mod solution;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

pub use adjudication::{adjudicate, Adjudication, CandidateRow};
pub use consistency::{bss_consistency, BssPoint, BssReport};
pub use nonlinear::{nonlinear_f, nonlinear_f_partials, NonlinearConstant, SourceSign};
pub use solution::{PerturbationOptions, PerturbationSolution, QuadratureDiagnostics, TransformGrid};

/// Above this value of `|ρ| T` the second-order series is not trustworthy.
pub const LARGE_RHO_T: f64 = 0.5;

/// A European call under constant volatility and arbitrage measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallSpec {
    /// Strike `K`.
    pub k: f64,
    /// Maturity `T`.
    pub maturity: f64,
    /// Volatility `σ`.
    pub sigma: f64,
    /// Arbitrage measure `ρ`.
    pub rho: f64,
    /// Short rate `r`, used only for undiscounted prices.
    #[serde(default)]
    pub r: f64,
}

impl CallSpec {
    pub fn new(k: f64, maturity: f64, sigma: f64, rho: f64, r: f64) -> Result<Self> {
        let spec = Self {
            k,
            maturity,
            sigma,
            rho,
            r,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive(self.k, "strike K")?;
        ensure_positive(self.maturity, "maturity T")?;
        ensure_positive(self.sigma, "volatility sigma")?;
        if !self.rho.is_finite() || !self.r.is_finite() {
            return Err(Error::InvalidInput("rho and r must be finite".into()));
        }
        Ok(())
    }

    /// A warning when `|ρ| T` exceeds [`LARGE_RHO_T`].
    pub fn warning(&self) -> Option<String> {
        let size = self.rho.abs() * self.maturity;
        (size > LARGE_RHO_T).then(|| {
            format!("|rho| T = {size:.3} exceeds {LARGE_RHO_T}; the second-order series may be inaccurate")
        })
    }

    /// Transformed time `τ = σ²(T − t)/2`.
    pub fn tau(&self, t: f64) -> f64 {
        0.5 * self.sigma * self.sigma * (self.maturity - t)
    }

    pub fn tau_max(&self) -> f64 {
        self.tau(0.0)
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..*self }
    }
}
