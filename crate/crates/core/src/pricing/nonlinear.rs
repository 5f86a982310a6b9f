//! The nonlinear source of the transformed pricing equation.
//!
//! After `x = K e^y`, `τ = σ²(T − t)/2` and `Φ = K e^{y/2 − τ/4} u`, the
//! arbitrage term of the pricing PDE becomes `c · √(5/4 u² + u u′ + u′²)`.
//! The square root is shared by every candidate normalisation; only the
//! constant `c` and the sign with which the term enters differ, so the
//! Duhamel integrals are computed once for `c = 1` and rescaled.

use serde::{Deserialize, Serialize};

use super::CallSpec;

/// Candidate values of the constant in front of the square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearConstant {
    /// `2K/σ²`, the normalisation written next to the series.
    StrikeScaled,
    /// `2/σ²`, what the change of variables `v = Φ/K` produces.
    Dimensionless,
}

impl NonlinearConstant {
    pub fn value(self, spec: &CallSpec) -> f64 {
        let base = 2.0 / (spec.sigma * spec.sigma);
        match self {
            Self::StrikeScaled => spec.k * base,
            Self::Dimensionless => base,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::StrikeScaled => "2K/sigma^2",
            Self::Dimensionless => "2/sigma^2",
        }
    }
}

/// Sign with which the first-order correction enters `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSign {
    /// `u = u₀ + ρU₁ + ρ²U₂`.
    AsPrinted,
    /// `u = u₀ − ρU₁ + ρ²U₂`: transforming `Φ_t + ½σ²X²Φ_xx = ρ√(Φ² + X²Φ_x²)`
    /// to forward time `τ` moves the source to the other side.
    Derived,
}

impl SourceSign {
    pub fn factor(self) -> f64 {
        match self {
            Self::AsPrinted => 1.0,
            Self::Derived => -1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::AsPrinted => "+",
            Self::Derived => "-",
        }
    }
}

/// A source term `F(u, u′)` together with its gradient.
pub trait Source: Sync {
    fn value(&self, v1: f64, v2: f64) -> f64;
    fn grad(&self, v1: f64, v2: f64) -> (f64, f64);
}

/// `√(5/4 v₁² + v₁v₂ + v₂²)`; the gradient is taken as `(0, 0)` at the
/// origin, where the square root is not differentiable.
#[derive(Debug, Clone, Copy, Default)]
pub struct SqrtForm;

impl Source for SqrtForm {
    fn value(&self, v1: f64, v2: f64) -> f64 {
        quad_form(v1, v2).sqrt()
    }

    fn grad(&self, v1: f64, v2: f64) -> (f64, f64) {
        let g = quad_form(v1, v2).sqrt();
        if g == 0.0 {
            return (0.0, 0.0);
        }
        ((2.5 * v1 + v2) / (2.0 * g), (v1 + 2.0 * v2) / (2.0 * g))
    }
}

/// `a v₁ + b v₂`, used to check the Duhamel machinery against closed forms.
#[derive(Debug, Clone, Copy)]
pub struct LinearSource {
    pub a: f64,
    pub b: f64,
}

impl Source for LinearSource {
    fn value(&self, v1: f64, v2: f64) -> f64 {
        self.a * v1 + self.b * v2
    }

    fn grad(&self, _v1: f64, _v2: f64) -> (f64, f64) {
        (self.a, self.b)
    }
}

fn quad_form(v1: f64, v2: f64) -> f64 {
    // positive definite: eigenvalues of [[5/4, 1/2], [1/2, 1]] are > 0
    (1.25 * v1 * v1 + v1 * v2 + v2 * v2).max(0.0)
}

/// `f(v₁, v₂) = (2K/σ²) √(5/4 v₁² + v₁v₂ + v₂²)`.
pub fn nonlinear_f(v1: f64, v2: f64, spec: &CallSpec) -> f64 {
    NonlinearConstant::StrikeScaled.value(spec) * SqrtForm.value(v1, v2)
}

/// `(∂f/∂v₁, ∂f/∂v₂)`, returned as `(0, 0)` at the origin.
pub fn nonlinear_f_partials(v1: f64, v2: f64, spec: &CallSpec) -> (f64, f64) {
    let c = NonlinearConstant::StrikeScaled.value(spec);
    let (g1, g2) = SqrtForm.grad(v1, v2);
    (c * g1, c * g2)
}
