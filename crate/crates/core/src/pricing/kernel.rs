//! Heat kernel and the zeroth-order solution `u₀` of the transformed
//! pricing equation `u_τ = u_yy` with call payoff `max(e^{y/2} − e^{−y/2}, 0)`.

use std::f64::consts::PI;

use super::quadrature::GaussLegendre;
use crate::classical::{norm_cdf, norm_pdf};
use crate::error::{Error, Result};

/// `G(τ, y; s, z) = exp(−(y − z)² / 4(τ − s)) / (2√(π(τ − s)))`.
pub fn heat_kernel(tau: f64, y: f64, s: f64, z: f64) -> Result<f64> {
    let dt = tau - s;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!(
            "heat kernel needs τ > s, got τ = {tau}, s = {s}"
        )));
    }
    let d = y - z;
    Ok((-d * d / (4.0 * dt)).exp() / (2.0 * (PI * dt).sqrt()))
}

/// Transformed call payoff `max(e^{y/2} − e^{−y/2}, 0)`.
pub fn payoff(y: f64) -> f64 {
    if y > 0.0 {
        2.0 * (0.5 * y).sinh()
    } else {
        0.0
    }
}

/// `u₀` with its first two `y`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct U0 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Evaluates `u₀(τ, y) = e^{y/2+τ/4} N(d₁) − e^{−y/2+τ/4} N(d₂)` with
/// `d₁,₂ = (y ± τ)/√(2τ)`, together with
/// `u₀′ = ½(e^{y/2+τ/4} N(d₁) + e^{−y/2+τ/4} N(d₂))` and
/// `u₀″ = u₀/4 + e^{−y/2+τ/4} φ(d₂)/√(2τ)`.
///
/// At `τ = 0` the payoff and its one-sided derivatives are returned.
pub fn u0_all(tau: f64, y: f64) -> U0 {
    if tau <= 0.0 {
        let value = payoff(y);
        let d1 = if y > 0.0 { (0.5 * y).cosh() } else { 0.0 };
        return U0 {
            value,
            d1,
            d2: 0.25 * value,
        };
    }
    let root = (2.0 * tau).sqrt();
    let a = (0.5 * y + 0.25 * tau).exp() * norm_cdf((y + tau) / root);
    let e = (-0.5 * y + 0.25 * tau).exp();
    let d2 = (y - tau) / root;
    let b = e * norm_cdf(d2);
    let value = (a - b).max(0.0);
    U0 {
        value,
        d1: 0.5 * (a + b),
        d2: 0.25 * value + e * norm_pdf(d2) / root,
    }
}

pub fn u0(tau: f64, y: f64) -> f64 {
    u0_all(tau, y).value
}

pub fn u0_prime(tau: f64, y: f64) -> f64 {
    u0_all(tau, y).d1
}

pub fn u0_second(tau: f64, y: f64) -> f64 {
    u0_all(tau, y).d2
}

/// `u₀(τ, y) = ∫ G(τ, y; 0, z) payoff(z) dz` evaluated by composite
/// Gauss-Legendre quadrature, independent of the closed form.
pub fn u0_by_quadrature(tau: f64, y: f64) -> f64 {
    if tau <= 0.0 {
        return payoff(y);
    }
    // z = y + 2√τ ξ turns the kernel into e^{−ξ²}/√π.
    let rule = GaussLegendre::new(20);
    let scale = 2.0 * tau.sqrt();
    let lo = (-y / scale).max(-12.0);
    let hi = 12.0f64;
    if lo >= hi {
        return 0.0;
    }
    let panels = ((hi - lo) / 0.25).ceil() as usize;
    let width = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * width;
        acc += rule.integrate(a, a + width, |xi| (-xi * xi).exp() * payoff(y + scale * xi));
    }
    acc / PI.sqrt()
}
