//! Assembly of the perturbation series on a `(τ, y)` grid and evaluation of
//! discounted and undiscounted call prices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::duhamel::{Duhamel, FirstOrderTable, QuadratureOptions, TableOptions, DEFAULT_Z_TRUNCATION};
use super::kernel::u0;
use super::nonlinear::{NonlinearConstant, SourceSign, SqrtForm};
use super::CallSpec;
use crate::error::{Error, Result};

/// Minimum node count in each direction.
pub const MIN_NODES: usize = 16;

/// Computational grid in the transformed variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformGrid {
    /// Increasing nodes in `(0, σ²T/2]`.
    pub tau_nodes: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
    /// Number of uniformly spaced `y` nodes, endpoints included.
    pub y_count: usize,
    /// Half-width of the `z`-integration window in units of `√(2τ)`.
    pub z_truncation: f64,
}

impl TransformGrid {
    pub fn new(tau_nodes: Vec<f64>, y_min: f64, y_max: f64, y_count: usize, z_truncation: f64) -> Result<Self> {
        if tau_nodes.len() < MIN_NODES || y_count < MIN_NODES {
            return Err(Error::Grid(format!(
                "transform grid needs at least {MIN_NODES} nodes per axis, got {} x {y_count}",
                tau_nodes.len()
            )));
        }
        if !(tau_nodes[0] > 0.0) || tau_nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("tau nodes must be positive and increasing".into()));
        }
        if !(y_min < 0.0 && 0.0 < y_max) {
            return Err(Error::Grid(format!(
                "y range [{y_min}, {y_max}] must contain 0 in its interior"
            )));
        }
        if !(z_truncation > 0.0) {
            return Err(Error::Grid("z truncation must be positive".into()));
        }
        Ok(Self {
            tau_nodes,
            y_min,
            y_max,
            y_count,
            z_truncation,
        })
    }

    /// `τ`-nodes `τ_max (i/n)²`, `i = 1..=n` (dense near expiry, where the
    /// corrections grow like `√τ`), and a symmetric `y`-range of
    /// `max(6σ√T, 0.5)` with an odd node count so that `y = 0` is a node.
    pub fn for_spec(spec: &CallSpec, tau_count: usize, y_count: usize) -> Result<Self> {
        let tau_max = spec.tau_max();
        let n = tau_count as f64;
        let tau_nodes = (1..=tau_count)
            .map(|i| tau_max * (i as f64 / n).powi(2))
            .collect();
        let half = (6.0 * spec.sigma * spec.maturity.sqrt()).max(0.5);
        Self::new(tau_nodes, -half, half, y_count | 1, DEFAULT_Z_TRUNCATION)
    }

    pub fn default_for(spec: &CallSpec) -> Result<Self> {
        Self::for_spec(spec, 24, 81)
    }

    /// The grid with twice as many intervals in each direction.
    pub fn refined(&self) -> Self {
        let mut tau_nodes = Vec::with_capacity(2 * self.tau_nodes.len());
        let mut prev = 0.0f64;
        for &t in &self.tau_nodes {
            // midpoint in √τ keeps quadratic spacing quadratic
            tau_nodes.push((0.5 * (prev.sqrt() + t.sqrt())).powi(2));
            tau_nodes.push(t);
            prev = t;
        }
        Self {
            tau_nodes,
            y_count: 2 * (self.y_count - 1) + 1,
            ..self.clone()
        }
    }

    pub fn tau_max(&self) -> f64 {
        *self.tau_nodes.last().expect("validated non-empty")
    }

    pub fn y_step(&self) -> f64 {
        (self.y_max - self.y_min) / (self.y_count - 1) as f64
    }

    pub fn y_at(&self, j: usize) -> f64 {
        if j + 1 == self.y_count {
            self.y_max
        } else {
            self.y_min + j as f64 * self.y_step()
        }
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.y_count).map(|j| self.y_at(j)).collect()
    }
}

/// Numerical settings of the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationOptions {
    pub quadrature: QuadratureOptions,
    pub table: TableOptions,
    pub constant: NonlinearConstant,
    pub sign: SourceSign,
    /// Largest accepted relative change of the probe corrections when the
    /// quadrature is refined.
    pub tolerance: f64,
}

impl Default for PerturbationOptions {
    fn default() -> Self {
        Self {
            quadrature: QuadratureOptions::default(),
            table: TableOptions::default(),
            constant: NonlinearConstant::Dimensionless,
            sign: SourceSign::Derived,
            tolerance: 1e-4,
        }
    }
}

/// Self-convergence of the Duhamel quadrature at the probe `(τ_max, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureDiagnostics {
    pub probe_tau: f64,
    pub probe_y: f64,
    /// Universal first-order correction (`c = 1`) and its refined value.
    pub first: f64,
    pub first_refined: f64,
    /// Universal second-order correction and its refined value.
    pub second: f64,
    pub second_refined: f64,
    /// Largest relative change under refinement.
    pub achieved: f64,
    pub requested: f64,
    pub table_nodes: usize,
}

/// `u₀`, `U₁ = c Û₁` and `U₂ = c² Û₂` on a [`TransformGrid`].
///
/// The universal corrections `Û₁, Û₂` (computed with `c = 1`) depend on
/// neither `ρ`, `K` nor `σ`; the stored solution can therefore be evaluated
/// for any `ρ` and for either candidate constant and sign.
#[derive(Debug, Clone)]
pub struct PerturbationSolution {
    spec: CallSpec,
    grid: TransformGrid,
    options: PerturbationOptions,
    u0: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    diagnostics: QuadratureDiagnostics,
    engine: Duhamel<SqrtForm>,
    table: FirstOrderTable,
}

impl PerturbationSolution {
    pub fn build(spec: &CallSpec, grid: &TransformGrid, options: PerturbationOptions) -> Result<Self> {
        spec.validate()?;
        let quadrature = QuadratureOptions {
            z_truncation: grid.z_truncation,
            ..options.quadrature
        };
        let engine = Duhamel::new(SqrtForm, quadrature);
        let tau_max = grid.tau_max();
        let table = engine.first_order_table(tau_max, grid.y_min, grid.y_max, options.table);

        let ny = grid.y_count;
        let nodes: Vec<(f64, f64, f64)> = (0..grid.tau_nodes.len() * ny)
            .into_par_iter()
            .map(|idx| {
                let tau = grid.tau_nodes[idx / ny];
                let y = grid.y_at(idx % ny);
                (
                    u0(tau, y),
                    engine.first_order(tau, y).0,
                    engine.second_order(&table, tau, y),
                )
            })
            .collect();
        let mut u0v = Vec::with_capacity(nodes.len());
        let mut w1 = Vec::with_capacity(nodes.len());
        let mut w2 = Vec::with_capacity(nodes.len());
        for (a, b, c) in nodes {
            u0v.push(a);
            w1.push(b);
            w2.push(c);
        }

        let fine = Duhamel::new(SqrtForm, quadrature.refined());
        let probe_y = 0.0f64.clamp(grid.y_min, grid.y_max);
        let first = engine.first_order(tau_max, probe_y).0;
        let first_refined = fine.first_order(tau_max, probe_y).0;
        let second = engine.second_order(&table, tau_max, probe_y);
        let second_refined = fine.second_order(&table, tau_max, probe_y);
        let rel = |a: f64, b: f64| if b == 0.0 { (a - b).abs() } else { ((a - b) / b).abs() };
        let achieved = rel(first, first_refined).max(rel(second, second_refined));
        let diagnostics = QuadratureDiagnostics {
            probe_tau: tau_max,
            probe_y,
            first,
            first_refined,
            second,
            second_refined,
            achieved,
            requested: options.tolerance,
            table_nodes: table.nodes(),
        };
        if !(achieved <= options.tolerance) {
            return Err(Error::Quadrature {
                achieved,
                requested: options.tolerance,
            });
        }
        Ok(Self {
            spec: *spec,
            grid: grid.clone(),
            options,
            u0: u0v,
            w1,
            w2,
            diagnostics,
            engine,
            table,
        })
    }

    pub fn spec(&self) -> &CallSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TransformGrid {
        &self.grid
    }

    pub fn options(&self) -> &PerturbationOptions {
        &self.options
    }

    pub fn diagnostics(&self) -> &QuadratureDiagnostics {
        &self.diagnostics
    }

    /// Same corrections, different arbitrage measure.
    pub fn with_rho(&self, rho: f64) -> Self {
        let mut out = self.clone();
        out.spec.rho = rho;
        out
    }

    /// The same universal corrections applied to another contract.
    ///
    /// Valid whenever the contract's `τ`-range lies inside the grid; strike,
    /// volatility, maturity, `ρ` and `r` may all change.
    pub fn with_spec(&self, spec: &CallSpec) -> Result<Self> {
        spec.validate()?;
        if spec.tau_max() > self.grid.tau_max() * (1.0 + 1e-12) {
            return Err(Error::GridIncompatible(format!(
                "contract needs tau up to {}, grid covers {}",
                spec.tau_max(),
                self.grid.tau_max()
            )));
        }
        let mut out = self.clone();
        out.spec = *spec;
        Ok(out)
    }

    /// Same corrections, different candidate normalisation.
    pub fn with_convention(&self, constant: NonlinearConstant, sign: SourceSign) -> Self {
        let mut out = self.clone();
        out.options.constant = constant;
        out.options.sign = sign;
        out
    }

    /// `u₀` on the grid, `τ`-major.
    pub fn u0_grid(&self) -> &[f64] {
        &self.u0
    }

    /// `U₁ = c Û₁` on the grid for the configured constant.
    pub fn u1_grid(&self) -> Vec<f64> {
        let c = self.constant_for(self.spec.k);
        self.w1.iter().map(|w| c * w).collect()
    }

    /// `U₂ = c² Û₂` on the grid for the configured constant.
    pub fn u2_grid(&self) -> Vec<f64> {
        let c = self.constant_for(self.spec.k);
        self.w2.iter().map(|w| c * c * w).collect()
    }

    fn constant_for(&self, k: f64) -> f64 {
        let base = 2.0 / (self.spec.sigma * self.spec.sigma);
        match self.options.constant {
            NonlinearConstant::StrikeScaled => k * base,
            NonlinearConstant::Dimensionless => base,
        }
    }

    /// Bilinear interpolation of the universal corrections; `Û = 0` at `τ = 0`.
    fn interpolate(&self, tau: f64, y: f64) -> (f64, f64) {
        let g = &self.grid;
        let ny = g.y_count;
        let fy = ((y - g.y_min) / g.y_step()).clamp(0.0, (ny - 1) as f64);
        let j = (fy.floor() as usize).min(ny - 2);
        let ty = fy - j as f64;
        let row = |i: usize| {
            let a = (1.0 - ty) * self.w1[i * ny + j] + ty * self.w1[i * ny + j + 1];
            let b = (1.0 - ty) * self.w2[i * ny + j] + ty * self.w2[i * ny + j + 1];
            (a, b)
        };
        let i = g.tau_nodes.partition_point(|&t| t < tau);
        if i == 0 {
            let (a, b) = row(0);
            let s = tau / g.tau_nodes[0];
            return (s * a, s * b);
        }
        if i >= g.tau_nodes.len() {
            return row(g.tau_nodes.len() - 1);
        }
        let (t0, t1) = (g.tau_nodes[i - 1], g.tau_nodes[i]);
        let s = (tau - t0) / (t1 - t0);
        let (a0, b0) = row(i - 1);
        let (a1, b1) = row(i);
        ((1.0 - s) * a0 + s * a1, (1.0 - s) * b0 + s * b1)
    }

    /// Checks the query and returns `(τ, y)`, or `None` at expiry.
    fn locate(&self, k: f64, x: f64, t: f64) -> Result<Option<(f64, f64)>> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("underlying price must be positive, got {x}")));
        }
        if !(0.0..=self.spec.maturity).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, T = {}]",
                self.spec.maturity
            )));
        }
        if t == self.spec.maturity {
            return Ok(None);
        }
        let y = (x / k).ln();
        if y < self.grid.y_min || y > self.grid.y_max {
            return Err(Error::Extrapolation {
                what: "log-moneyness",
                value: y,
                lo: self.grid.y_min,
                hi: self.grid.y_max,
            });
        }
        let tau = self.spec.tau(t);
        if tau > self.grid.tau_max() * (1.0 + 1e-12) {
            return Err(Error::Extrapolation {
                what: "tau",
                value: tau,
                lo: 0.0,
                hi: self.grid.tau_max(),
            });
        }
        Ok(Some((tau, y)))
    }

    fn assemble(&self, k: f64, tau: f64, y: f64, w1: f64, w2: f64) -> f64 {
        let c = self.constant_for(k);
        let rho = self.spec.rho;
        let u = u0(tau, y) + self.options.sign.factor() * rho * c * w1 + rho * rho * c * c * w2;
        k * (0.5 * y - 0.25 * tau).exp() * u
    }

    fn discounted_with_strike(&self, k: f64, x: f64, t: f64) -> Result<f64> {
        match self.locate(k, x, t)? {
            None => Ok((x - k).max(0.0)),
            Some((tau, y)) => {
                let (w1, w2) = self.interpolate(tau, y);
                Ok(self.assemble(k, tau, y, w1, w2))
            }
        }
    }

    /// Discounted call price `Φ(t, X)`; `u₀` is exact and the corrections
    /// are interpolated bilinearly from the grid.
    pub fn price_discounted(&self, x: f64, t: f64) -> Result<f64> {
        self.discounted_with_strike(self.spec.k, x, t)
    }

    /// As [`Self::price_discounted`] but with the corrections evaluated by
    /// quadrature at the query point instead of interpolated.
    pub fn price_discounted_direct(&self, x: f64, t: f64) -> Result<f64> {
        let k = self.spec.k;
        match self.locate(k, x, t)? {
            None => Ok((x - k).max(0.0)),
            Some((tau, y)) => {
                let (w1, _) = self.engine.first_order(tau, y);
                let w2 = self.engine.second_order(&self.table, tau, y);
                Ok(self.assemble(k, tau, y, w1, w2))
            }
        }
    }

    /// Undiscounted price `Ψ(t, S) = e^{rt} Φ(t, e^{−rt} S)`.
    ///
    /// `Φ` here is the discounted-price solution with terminal value
    /// `(x − K e^{−rT})⁺`, so it is evaluated with the discounted strike.
    pub fn price_undiscounted(&self, s: f64, t: f64) -> Result<f64> {
        if t == self.spec.maturity && s > 0.0 {
            return Ok((s - self.spec.k).max(0.0));
        }
        let r = self.spec.r;
        let k = self.spec.k * (-r * self.spec.maturity).exp();
        Ok((r * t).exp() * self.discounted_with_strike(k, (-r * t).exp() * s, t)?)
    }
}
