//! Closed-form Black-Scholes call values used as reference prices.

use statrs::function::erf::erfc;

/// Standard normal distribution function, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Black-Scholes call value with spot `s`, strike `k`, time to maturity
/// `tau`, volatility `sigma` and continuously compounded rate `r`.
///
/// At `tau = 0` (or `sigma = 0`) the value degenerates to the discounted
/// intrinsic value.
pub fn bs_call(s: f64, k: f64, tau: f64, sigma: f64, r: f64) -> f64 {
    let df = (-r * tau).exp();
    let vol = sigma * tau.sqrt();
    if vol <= 0.0 || s <= 0.0 {
        return (s - k * df).max(0.0);
    }
    let d1 = ((s / k).ln() + r * tau) / vol + 0.5 * vol;
    let d2 = d1 - vol;
    s * norm_cdf(d1) - k * df * norm_cdf(d2)
}

/// Call delta `∂C/∂s`.
pub fn bs_call_delta(s: f64, k: f64, tau: f64, sigma: f64, r: f64) -> f64 {
    let vol = sigma * tau.sqrt();
    if vol <= 0.0 {
        return if s > k * (-r * tau).exp() { 1.0 } else { 0.0 };
    }
    norm_cdf(((s / k).ln() + r * tau) / vol + 0.5 * vol)
}
