//! Ensemble estimators built on the Nelson derivatives: portfolio
//! instantaneous returns, the empirical arbitrage measure `ρ̂` and the
//! self-financing residual of a trading strategy.
//!
//! Quantities reported as ensemble means use the tower property
//! `E[E[Y | X_t]] = E[Y]`: the mean of the conditional estimator equals the
//! mean of the raw difference quotients, whose sample deviation gives an
//! honest standard error (k-NN smoothed values are correlated across paths).

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nelson::{mean_se, nelson_derivatives, ConditioningState, EstimatorConfig};
use super::{CoefficientSchedule, PathArray, PathEnsemble};
use crate::error::{Error, Result};
use crate::gauges::{forward_rate, portfolio_weights_at, short_rate, Gauge, PortfolioNominals};
use crate::geometry::kernel_basis;

/// Instantaneous portfolio return at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPoint {
    pub step: usize,
    pub t: f64,
    /// Ensemble mean of `𝒟 log D^x_t + r^x_t`.
    pub mean: f64,
    /// Standard error of `mean`.
    pub se: f64,
    /// Per-path conditional estimates (k-NN `𝒟 log D^x` plus `r^x`).
    pub conditional: Vec<f64>,
    /// Per-path raw values (centred quotient of `log D^x` plus `r^x`).
    pub raw: Vec<f64>,
}

/// Short rates of each asset on an ensemble grid, derived from the assets'
/// gauges. The gauge valuation grid must start at 0 with the ensemble step
/// and cover every ensemble time.
pub fn short_rates_on_grid(gauges: &[Gauge], ensemble: &PathEnsemble) -> Result<Vec<Vec<f64>>> {
    if gauges.len() != ensemble.assets() {
        return Err(Error::Shape(format!(
            "{} gauges for {} assets",
            gauges.len(),
            ensemble.assets()
        )));
    }
    gauges
        .iter()
        .map(|g| {
            let times = g.times();
            if times.start().abs() > 1e-12
                || (times.step() - ensemble.dt).abs() > 1e-9 * ensemble.dt
                || times.len() < ensemble.s.len()
            {
                return Err(Error::GridIncompatible(format!(
                    "gauge grid (start {}, step {}, {} points) does not cover the ensemble grid (step {}, {} points)",
                    times.start(),
                    times.step(),
                    times.len(),
                    ensemble.dt,
                    ensemble.s.len()
                )));
            }
            short_rate(&forward_rate(g)?)
        })
        .collect()
}

fn rate_at(rates: &[f64], step: usize) -> f64 {
    rates[step.min(rates.len() - 1)]
}

fn check_rates(rates: &[Vec<f64>], n: usize, len: usize) -> Result<()> {
    if rates.len() != n {
        return Err(Error::Shape(format!("{} rate series for {n} assets", rates.len())));
    }
    if rates.iter().any(|r| r.is_empty() || (r.len() != 1 && r.len() < len)) {
        return Err(Error::GridIncompatible(format!(
            "rate series must hold one constant or {len} samples"
        )));
    }
    Ok(())
}

/// `Ret^x_t = 𝒟 log D^x_t + r^x_t` for the portfolio `x` of the simulated
/// deflators, with `D^x = Σ x_j Ŝ^j` and `r^x` the value-weighted average
/// of the per-asset short rates `rates[j]` (one constant or one sample per
/// time point).
pub fn instantaneous_return(
    ensemble: &PathEnsemble,
    x: &PortfolioNominals,
    rates: &[Vec<f64>],
    steps: &[usize],
    cfg: &EstimatorConfig,
    conditioning: ConditioningState,
) -> Result<Vec<ReturnPoint>> {
    let n = ensemble.assets();
    if x.len() != n {
        return Err(Error::Shape(format!("{} nominals for {n} assets", x.len())));
    }
    check_rates(rates, n, ensemble.s.len())?;
    let xs = x.as_slice();
    let len = ensemble.s.len();
    // log D^x per path, checking that the portfolio deflator keeps one sign
    let mut log_dx = PathArray::zeros(ensemble.paths(), len, 1);
    let mut sign = vec![0.0; ensemble.paths()];
    for p in 0..ensemble.paths() {
        for i in 0..len {
            let v: f64 = xs.iter().zip(ensemble.s.state(p, i)).map(|(a, s)| a * s).sum();
            if i == 0 {
                sign[p] = v.signum();
            }
            if v == 0.0 || v.signum() != sign[p] || !v.is_finite() {
                return Err(Error::DegeneratePortfolio { t: ensemble.time(i) });
            }
            log_dx.data[p * len + i] = (v * sign[p]).ln();
        }
    }
    let state = conditioning.of(ensemble);
    let series = nelson_derivatives(&log_dx, &state, ensemble.dt, steps, cfg)?;
    series
        .into_iter()
        .map(|s| {
            let r_now: Vec<f64> = (0..n).map(|j| rate_at(&rates[j], s.step)).collect();
            let rx = (0..ensemble.paths())
                .map(|p| {
                    let w = portfolio_weights_at(xs, ensemble.s.state(p, s.step), s.t)?;
                    Ok(w.iter().zip(&r_now).map(|(w, r)| w * r).sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()?;
            let raw: Vec<f64> = s.raw_mean().iter().zip(&rx).map(|(d, r)| d + r).collect();
            let conditional = s.mean.iter().zip(&rx).map(|(d, r)| d + r).collect();
            let (mean, se) = mean_se(&raw);
            Ok(ReturnPoint {
                step: s.step,
                t: s.t,
                mean,
                se,
                conditional,
                raw,
            })
        })
        .collect()
}

/// Empirical arbitrage measure over one time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoPoint {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Number of grid times averaged in the bucket.
    pub steps: usize,
    /// Dimension of the kernel of `σ†`.
    pub kernel_dim: usize,
    /// `ρ̂ = J†(α̂ + r)`, bucket averaged.
    pub rho: Vec<f64>,
    pub rho_se: Vec<f64>,
    /// Per-asset `α̂ + r`, bucket averaged.
    pub drift: Vec<f64>,
    pub drift_se: Vec<f64>,
}

impl RhoPoint {
    /// Whether every component of `ρ̂` lies within `z` standard errors of
    /// `target`. The standard error is floored at `1e-12` so that exactly
    /// determined estimates still get a numerical tolerance.
    pub fn consistent_with(&self, target: &[f64], z: f64) -> bool {
        self.rho.len() == target.len()
            && self
                .rho
                .iter()
                .zip(&self.rho_se)
                .zip(target)
                .all(|((r, se), t)| (r - t).abs() <= z * se.max(RHO_SE_FLOOR))
    }
}

/// Floor applied to standard errors when testing `ρ̂` against a target.
pub const RHO_SE_FLOOR: f64 = 1e-12;

/// Estimates `α + r` per asset from the ensemble and projects it on the
/// kernel basis `J` of `σ†`, averaging each path over the grid times of each
/// bucket `[t_lo, t_hi]`.
///
/// Per path and time, `α̂ + r = 𝒟 log Ŝ + r + ½diag(σσ†) − σW_t/(2t)`: the
/// mean derivative of `log Ŝ` is taken from the centred quotient and the
/// singular Brownian term is removed analytically from the stored `W`. The
/// correction is exact for loadings that are constant over the bucket.
pub fn empirical_rho(
    ensemble: &PathEnsemble,
    model: &CoefficientSchedule,
    buckets: &[(f64, f64)],
    cfg: &EstimatorConfig,
) -> Result<Vec<RhoPoint>> {
    let n = ensemble.assets();
    let kf = ensemble.factors();
    if model.assets() != n || model.factors() != kf {
        return Err(Error::Shape(format!(
            "model is {}x{}, ensemble is {n}x{kf}",
            model.assets(),
            model.factors()
        )));
    }
    let lag = cfg.validate(ensemble.dt)?;
    let dt = ensemble.dt;
    let h = lag as f64 * dt;
    let steps_total = ensemble.steps();
    buckets
        .iter()
        .map(|&(t_lo, t_hi)| {
            if !(t_hi >= t_lo) {
                return Err(Error::InvalidInput(format!("empty bucket [{t_lo}, {t_hi}]")));
            }
            let first = cfg.step_of((t_lo / dt).ceil() * dt, dt, steps_total)?;
            let last = ((t_hi / dt) + 1e-9).floor() as usize;
            cfg.step_of(last as f64 * dt, dt, steps_total)?;
            if last < first {
                return Err(Error::Grid(format!(
                    "bucket [{t_lo}, {t_hi}] holds no grid time"
                )));
            }
            let count = last - first + 1;
            // per-step geometry shared by all paths
            struct StepGeom {
                half_diag_plus_r: DVector<f64>,
                j: nalgebra::DMatrix<f64>,
            }
            let geoms: Vec<StepGeom> = (first..=last)
                .map(|i| {
                    let c = model.at(i);
                    let sst = &c.sigma * c.sigma.transpose();
                    StepGeom {
                        half_diag_plus_r: sst.diagonal() * 0.5 + &c.r,
                        j: kernel_basis(&c.sigma).j,
                    }
                })
                .collect();
            let b = geoms[0].j.ncols();
            if geoms.iter().any(|g| g.j.ncols() != b) {
                return Err(Error::Domain(format!(
                    "kernel dimension of σ† changes inside bucket [{t_lo}, {t_hi}]"
                )));
            }
            let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..ensemble.paths())
                .into_par_iter()
                .map(|p| {
                    let mut drift = vec![0.0; n];
                    let mut rho = vec![0.0; b];
                    let mut a = DVector::zeros(n);
                    for (g, i) in geoms.iter().zip(first..=last) {
                        let t = i as f64 * dt;
                        let c = model.at(i);
                        let up = ensemble.s.state(p, i + lag);
                        let down = ensemble.s.state(p, i - lag);
                        let w = ensemble.w.state(p, i);
                        for jx in 0..n {
                            let sw: f64 = (0..kf).map(|f| c.sigma[(jx, f)] * w[f]).sum();
                            a[jx] = (up[jx].ln() - down[jx].ln()) / (2.0 * h)
                                + g.half_diag_plus_r[jx]
                                - sw / (2.0 * t);
                            drift[jx] += a[jx];
                        }
                        let proj = g.j.tr_mul(&a);
                        for (r, v) in rho.iter_mut().zip(proj.iter()) {
                            *r += v;
                        }
                    }
                    let scale = 1.0 / count as f64;
                    drift.iter_mut().for_each(|v| *v *= scale);
                    rho.iter_mut().for_each(|v| *v *= scale);
                    (drift, rho)
                })
                .collect();
            let (drifts, rhos): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_path.into_iter().unzip();
            let column = |rows: &[Vec<f64>], j: usize| {
                let v: Vec<f64> = rows.iter().map(|row| row[j]).collect();
                mean_se(&v)
            };
            let (drift, drift_se): (Vec<f64>, Vec<f64>) = (0..n).map(|j| column(&drifts, j)).unzip();
            let (rho, rho_se): (Vec<f64>, Vec<f64>) = (0..b).map(|j| column(&rhos, j)).unzip();
            Ok(RhoPoint {
                t_lo: first as f64 * dt,
                t_hi: last as f64 * dt,
                steps: count,
                kernel_dim: b,
                rho,
                rho_se,
                drift,
                drift_se,
            })
        })
        .collect()
}

/// Self-financing residual of a strategy at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfFinancingPoint {
    pub step: usize,
    pub t: f64,
    /// Ensemble mean of `𝒟(x·D) − x·𝒟D + ½D*⟨x, D⟩`.
    pub residual: f64,
    pub se: f64,
    /// Ensemble mean of the backward covariation derivative `D*⟨x, D⟩`.
    pub covariation: f64,
    pub covariation_se: f64,
}

/// Residual of the self-financing identity `𝒟(x·D) = x·𝒟D − ½D*⟨x, D⟩` for
/// holdings `x` and deflators `D` sampled on the ensemble grid.
///
/// The discrete covariation `Σ Δx·ΔD` over the backward window is always
/// computed and reported; it vanishes in the continuous limit for strategies
/// of finite variation.
pub fn self_financing_residual(
    x: &PathArray,
    d: &PathArray,
    ensemble: &PathEnsemble,
    steps: &[usize],
    cfg: &EstimatorConfig,
) -> Result<Vec<SelfFinancingPoint>> {
    if !x.same_grid(d) || !x.same_grid(&ensemble.s) || x.dim() != d.dim() {
        return Err(Error::GridIncompatible(format!(
            "strategy ({}x{}x{}), deflators ({}x{}x{}) and ensemble ({}x{}) differ",
            x.paths(),
            x.len(),
            x.dim(),
            d.paths(),
            d.len(),
            d.dim(),
            ensemble.paths(),
            ensemble.s.len()
        )));
    }
    let lag = cfg.validate(ensemble.dt)?;
    let h = lag as f64 * ensemble.dt;
    let last = x.len() - 1;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    steps
        .par_iter()
        .map(|&i| {
            let t = i as f64 * ensemble.dt;
            if t < cfg.t_min - 1e-9 * ensemble.dt || i < lag || i + lag > last {
                return Err(Error::Extrapolation {
                    what: "estimation time",
                    value: t,
                    lo: cfg.t_min,
                    hi: last.saturating_sub(lag) as f64 * ensemble.dt,
                });
            }
            let (res, cov): (Vec<f64>, Vec<f64>) = (0..x.paths())
                .map(|p| {
                    let v = |j: usize| dot(x.state(p, j), d.state(p, j));
                    let dv = (v(i + lag) - v(i - lag)) / (2.0 * h);
                    let xi = x.state(p, i);
                    let dd: f64 = (0..x.dim())
                        .map(|c| xi[c] * (d.get(p, i + lag, c) - d.get(p, i - lag, c)))
                        .sum::<f64>()
                        / (2.0 * h);
                    let cov: f64 = (i - lag..i)
                        .map(|j| {
                            (0..x.dim())
                                .map(|c| {
                                    (x.get(p, j + 1, c) - x.get(p, j, c))
                                        * (d.get(p, j + 1, c) - d.get(p, j, c))
                                })
                                .sum::<f64>()
                        })
                        .sum::<f64>()
                        / h;
                    (dv - dd + 0.5 * cov, cov)
                })
                .unzip();
            let (residual, se) = mean_se(&res);
            let (covariation, covariation_se) = mean_se(&cov);
            Ok(SelfFinancingPoint {
                step: i,
                t,
                residual,
                se,
                covariation,
                covariation_se,
            })
        })
        .collect()
}
