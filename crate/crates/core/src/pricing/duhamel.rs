//! Duhamel (heat-kernel) integrals for the first two perturbation orders.
//!
//! For a source `F(u, u′)` the corrections solve `w_τ = w_yy + S` with zero
//! initial data, so
//!
//! ```text
//! Û₁(τ, y) = ∫₀^τ ds ∫ dz G(τ, y; s, z) F(u₀, u₀′)(s, z)
//! Û₂(τ, y) = ∫₀^τ ds ∫ dz G(τ, y; s, z) [F₁ Û₁ + F₂ Û₁′](s, z)
//! ```
//!
//! with `F₁, F₂` the partial derivatives of `F` evaluated on `u₀`.
//!
//! The space integral uses `z = y + 2√(τ − s) ξ`, which turns the kernel into
//! the weight `e^{−ξ²}/√π` and removes the `(τ − s)^{−1/2}` singularity, and
//! is truncated at `|z − y| ≤ c √(2(τ − s))`. Composite Gauss-Legendre panels
//! are graded towards `z = 0`, where `u₀′` develops a front of width `√s` as
//! `s → 0`. The time integral is split at `τ/2` and mapped with `s = v²` and
//! `s = τ − w²` respectively, so both endpoint behaviours become smooth.
//!
//! `Û₁′` is obtained from the same quadrature by moving the `y`-derivative
//! onto the source (`∂_y G = −∂_z G`, then integrating by parts), which avoids
//! differentiating a tabulated function.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::u0_all;
use super::nonlinear::Source;
use super::quadrature::{graded_breaks, GaussLegendre};

/// Truncation of the `z`-integral in units of `√(2(τ − s))`.
pub const DEFAULT_Z_TRUNCATION: f64 = 10.0;

/// Node counts of the space-time rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Gauss-Legendre nodes on each half of `[0, τ]`.
    pub time_nodes: usize,
    /// Gauss-Legendre nodes per `ξ`-panel.
    pub panel_nodes: usize,
    /// Half-width of the `z`-window in units of `√(2(τ − s))`.
    pub z_truncation: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            time_nodes: 16,
            panel_nodes: 8,
            z_truncation: DEFAULT_Z_TRUNCATION,
        }
    }
}

impl QuadratureOptions {
    /// The rule used to check convergence: more nodes in both directions.
    pub fn refined(&self) -> Self {
        Self {
            time_nodes: self.time_nodes * 3 / 2 + 2,
            panel_nodes: self.panel_nodes + 4,
            z_truncation: self.z_truncation,
        }
    }
}

/// Resolution of the tabulated first-order correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Intervals in `√s` on `[0, √τ_max]`.
    pub sqrt_tau_intervals: usize,
    /// Step in `η`, where `z = a sinh η` with `a = √τ_max / 2`.
    pub eta_step: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            sqrt_tau_intervals: 32,
            eta_step: 0.04,
        }
    }
}

impl TableOptions {
    pub fn refined(&self) -> Self {
        Self {
            sqrt_tau_intervals: self.sqrt_tau_intervals * 2,
            eta_step: self.eta_step / 2.0,
        }
    }
}

/// Space-time quadrature engine for a given source.
#[derive(Debug, Clone)]
pub struct Duhamel<S> {
    source: S,
    opts: QuadratureOptions,
    time_rule: GaussLegendre,
    panel_rule: GaussLegendre,
}

impl<S: Source> Duhamel<S> {
    pub fn new(source: S, opts: QuadratureOptions) -> Self {
        Self {
            time_rule: GaussLegendre::new(opts.time_nodes),
            panel_rule: GaussLegendre::new(opts.panel_nodes),
            source,
            opts,
        }
    }

    pub fn options(&self) -> &QuadratureOptions {
        &self.opts
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    /// Time nodes and weights on `[0, τ]`.
    fn time_points(&self, tau: f64) -> Vec<(f64, f64)> {
        let edge = (0.5 * tau).sqrt();
        let mut pts = Vec::with_capacity(2 * self.time_rule.len());
        for (x, w) in self.time_rule.nodes.iter().zip(&self.time_rule.weights) {
            let v = 0.5 * edge * (1.0 + x);
            let jac = 0.5 * edge * w * 2.0 * v;
            pts.push((v * v, jac));
            pts.push((tau - v * v, jac));
        }
        pts
    }

    /// `∫ dz G(τ, y; s, z) h(z)` for two integrands at once.
    fn space_integral(
        &self,
        tau: f64,
        y: f64,
        s: f64,
        mut h: impl FnMut(f64) -> [f64; 2],
    ) -> [f64; 2] {
        let scale = 2.0 * (tau - s).sqrt();
        let xi_max = self.opts.z_truncation / std::f64::consts::SQRT_2;
        let breaks = graded_breaks(xi_max, -y / scale, 0.5 * s.sqrt() / scale);
        let mut acc = [0.0; 2];
        for w in breaks.windows(2) {
            let half = 0.5 * (w[1] - w[0]);
            let mid = 0.5 * (w[1] + w[0]);
            for (x, wt) in self.panel_rule.nodes.iter().zip(&self.panel_rule.weights) {
                let xi = mid + half * x;
                let k = wt * half * (-xi * xi).exp();
                let v = h(y + scale * xi);
                acc[0] += k * v[0];
                acc[1] += k * v[1];
            }
        }
        let norm = 1.0 / PI.sqrt();
        [acc[0] * norm, acc[1] * norm]
    }

    /// `(Û₁, Û₁′)` at `(τ, y)`.
    pub fn first_order(&self, tau: f64, y: f64) -> (f64, f64) {
        if tau <= 0.0 {
            return (0.0, 0.0);
        }
        let mut out = (0.0, 0.0);
        for (s, ws) in self.time_points(tau) {
            let [a, b] = self.space_integral(tau, y, s, |z| {
                let u = u0_all(s, z);
                let f = self.source.value(u.value, u.d1);
                let (g1, g2) = self.source.grad(u.value, u.d1);
                [f, g1 * u.d1 + g2 * u.d2]
            });
            out.0 += ws * a;
            out.1 += ws * b;
        }
        out
    }

    /// `Û₂` at `(τ, y)` using a tabulated first-order correction.
    pub fn second_order(&self, table: &FirstOrderTable, tau: f64, y: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let mut out = 0.0;
        for (s, ws) in self.time_points(tau) {
            let [a, _] = self.space_integral(tau, y, s, |z| {
                let u = u0_all(s, z);
                let (g1, g2) = self.source.grad(u.value, u.d1);
                if g1 == 0.0 && g2 == 0.0 {
                    return [0.0, 0.0];
                }
                let (w, wp) = table.eval(s, z);
                [g1 * w + g2 * wp, 0.0]
            });
            out += ws * a;
        }
        out
    }

    /// Tabulates `(Û₁, Û₁′)` on `s ∈ [0, τ_max]`, covering every `z` that the
    /// second-order quadrature reaches from `y ∈ [y_lo, y_hi]`.
    pub fn first_order_table(
        &self,
        tau_max: f64,
        y_lo: f64,
        y_hi: f64,
        opts: TableOptions,
    ) -> FirstOrderTable {
        let halo = self.opts.z_truncation * (2.0 * tau_max).sqrt();
        let a = 0.5 * tau_max.sqrt();
        let h = opts.eta_step;
        let eta_lo = ((y_lo - halo) / a).asinh() - 2.0 * h;
        let eta_hi = ((y_hi + halo) / a).asinh() + 2.0 * h;
        let n_eta = ((eta_hi - eta_lo) / h).ceil() as usize + 1;
        let nq = opts.sqrt_tau_intervals.max(3);
        let q_step = tau_max.sqrt() / nq as f64;
        let cells: Vec<(f64, f64)> = (0..=nq)
            .into_par_iter()
            .flat_map_iter(|iq| {
                let s = (iq as f64 * q_step).powi(2);
                (0..n_eta).map(move |ie| (s, a * (eta_lo + ie as f64 * h).sinh()))
            })
            .map(|(s, z)| self.first_order(s, z))
            .collect();
        let (value, deriv) = cells.into_iter().unzip();
        FirstOrderTable {
            q_step,
            nq,
            a,
            eta_lo,
            eta_step: h,
            n_eta,
            value,
            deriv,
        }
    }
}

/// `(Û₁, Û₁′)` sampled on a grid uniform in `√s` and in `η = asinh(z/a)`,
/// interpolated by tensor cubic Lagrange polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderTable {
    q_step: f64,
    nq: usize,
    a: f64,
    eta_lo: f64,
    eta_step: f64,
    n_eta: usize,
    value: Vec<f64>,
    deriv: Vec<f64>,
}

impl FirstOrderTable {
    pub fn tau_max(&self) -> f64 {
        (self.q_step * self.nq as f64).powi(2)
    }

    /// Covered `z`-interval.
    pub fn z_range(&self) -> (f64, f64) {
        let hi = self.eta_lo + (self.n_eta - 1) as f64 * self.eta_step;
        (self.a * self.eta_lo.sinh(), self.a * hi.sinh())
    }

    pub fn nodes(&self) -> usize {
        self.value.len()
    }

    /// Interpolated `(Û₁, Û₁′)` at `(s, z)`; the stencil is clamped at the
    /// table edges.
    pub fn eval(&self, s: f64, z: f64) -> (f64, f64) {
        let (iq, wq) = cubic_stencil(s.max(0.0).sqrt() / self.q_step, self.nq + 1);
        let (ie, we) = cubic_stencil((z / self.a).asinh() / self.eta_step - self.eta_lo / self.eta_step, self.n_eta);
        let mut v = 0.0;
        let mut d = 0.0;
        for (a, wa) in wq.iter().enumerate() {
            let row = (iq + a) * self.n_eta + ie;
            for (b, wb) in we.iter().enumerate() {
                let w = wa * wb;
                v += w * self.value[row + b];
                d += w * self.deriv[row + b];
            }
        }
        (v, d)
    }
}

/// First node and the four Lagrange weights for fractional index `x` on a
/// grid of `n ≥ 4` nodes.
fn cubic_stencil(x: f64, n: usize) -> (usize, [f64; 4]) {
    let i = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let t = x - i as f64;
    let w = [
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ];
    (i, w)
}
