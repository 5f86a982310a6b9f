//! Consistency of a price surface with the two-asset decomposition behind
//! the pricing equation.
//!
//! For the pair (underlying, derivative) the loadings are `σ̄ = [σ, τ_t]`
//! with `τ_t = σ X Φ_x / Φ` and the drifts `ᾱ = [α, β_t]` with
//! `β_t Φ = Φ_t + α X Φ_x + ½σ²X²Φ_xx`. Projecting `ᾱ` on the kernel of `σ̄`
//! recovers the arbitrage measure, independently of the asset drift `α`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CallSpec;
use crate::error::Result;
use crate::geometry::{kernel_basis, ItoCoefficients};

/// Prices below this fraction of the strike are excluded from the report.
pub const MIN_PRICE_FRACTION: f64 = 1e-6;

/// Implied quantities at one surface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BssPoint {
    pub t: f64,
    pub x: f64,
    pub phi: f64,
    pub tau: f64,
    pub beta: f64,
    pub rho_implied: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssReport {
    pub rho_input: f64,
    pub points: Vec<BssPoint>,
    /// Points skipped because the price vanishes there.
    pub excluded: usize,
    pub max_abs_error: f64,
}

/// Derivatives of `price` are taken by centred differences with steps `ht`
/// in time and `hx·X` in the underlying; `alpha` is the asset drift used to
/// form `β_t` (any value gives the same `ρ`).
#[allow(clippy::too_many_arguments)]
pub fn bss_consistency(
    price: impl Fn(f64, f64) -> Result<f64>,
    spec: &CallSpec,
    ts: &[f64],
    xs: &[f64],
    ht: f64,
    hx: f64,
    alpha: f64,
) -> Result<BssReport> {
    let sigma = spec.sigma;
    let mut points = Vec::new();
    let mut excluded = 0;
    for &t in ts {
        for &x in xs {
            let phi = price(t, x)?;
            if !(phi > MIN_PRICE_FRACTION * spec.k) {
                excluded += 1;
                continue;
            }
            let dx = hx * x;
            let up = price(t, x + dx)?;
            let dn = price(t, x - dx)?;
            let phi_x = (up - dn) / (2.0 * dx);
            let phi_xx = (up - 2.0 * phi + dn) / (dx * dx);
            let phi_t = (price(t + ht, x)? - price(t - ht, x)?) / (2.0 * ht);
            let tau = sigma * x * phi_x / phi;
            let beta = (phi_t + alpha * x * phi_x + 0.5 * sigma * sigma * x * x * phi_xx) / phi;
            let coeffs = ItoCoefficients::new(
                DVector::from_vec(vec![alpha, beta]),
                DMatrix::from_vec(2, 1, vec![sigma, tau]),
                DVector::zeros(2),
                t,
            )?;
            let basis = kernel_basis(&coeffs.sigma);
            // orient J as [−τ, σ]/‖σ̄‖, i.e. with a positive second entry
            let orientation = basis.j[(1, 0)].signum();
            let rho_implied = orientation * (basis.j.transpose() * coeffs.excess_drift())[0];
            points.push(BssPoint {
                t,
                x,
                phi,
                tau,
                beta,
                rho_implied,
            });
        }
    }
    let max_abs_error = points
        .iter()
        .map(|p| (p.rho_implied - spec.rho).abs())
        .fold(0.0, f64::max);
    Ok(BssReport {
        rho_input: spec.rho,
        points,
        excluded,
        max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::bs_call;

    #[test]
    fn classical_surface_has_no_arbitrage() {
        let spec = CallSpec::new(100.0, 1.0, 0.2, 0.0, 0.0).unwrap();
        let price = |t: f64, x: f64| Ok(bs_call(x, 100.0, 1.0 - t, 0.2, 0.0));
        let report = bss_consistency(price, &spec, &[0.2, 0.5], &[90.0, 100.0, 110.0], 1e-4, 1e-4, 0.07).unwrap();
        assert_eq!(report.points.len(), 6);
        assert!(report.max_abs_error < 1e-5, "{}", report.max_abs_error);
    }

    #[test]
    fn deep_in_the_money_loading_tends_to_sigma() {
        let spec = CallSpec::new(100.0, 1.0, 0.2, 0.0, 0.0).unwrap();
        let price = |t: f64, x: f64| Ok(bs_call(x, 100.0, 1.0 - t, 0.2, 0.0));
        let mut prev = f64::INFINITY;
        for x in [200.0, 400.0, 1000.0, 3000.0] {
            let report = bss_consistency(price, &spec, &[0.5], &[x], 1e-4, 1e-5, 0.0).unwrap();
            let tau = report.points[0].tau;
            // Φ ≈ X − K far in the money, so τ ≈ σX/(X − K) ↓ σ
            assert!((tau - 0.2 * x / (x - 100.0)).abs() < 1e-4);
            assert!(tau < prev && tau > 0.2);
            prev = tau;
        }
        assert!(prev - 0.2 < 0.01);
    }

    #[test]
    fn zero_prices_are_excluded() {
        let spec = CallSpec::new(100.0, 1.0, 0.2, 0.0, 0.0).unwrap();
        let report = bss_consistency(|_, _| Ok(0.0), &spec, &[0.5], &[10.0, 20.0], 1e-4, 1e-4, 0.0).unwrap();
        assert_eq!(report.excluded, 2);
        assert!(report.points.is_empty());
    }
}
