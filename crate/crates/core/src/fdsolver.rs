//! Finite-difference solver for the nonlinear pricing equation
//!
//! ```text
//! Φ_t + ½σ²X²Φ_xx = ρ √(Φ² + X²Φ_x²)
//! ```
//!
//! and for its undiscounted form with the extra `rSΨ_s − rΨ` terms. The
//! solver knows nothing about the perturbation series and serves as its
//! reference.
//!
//! In the log variable `y = ln X` the equation has constant coefficients:
//! `Φ_t + ½σ²(Φ_yy − Φ_y) = ρ√(Φ² + Φ_y²)`, whose right-hand side is the
//! smooth form of `ρΦ√(1 + (XΦ_x/Φ)²)` without the division by `Φ`. It is
//! marched backward from the payoff with Crank-Nicolson diffusion and a
//! Heun (explicit trapezoidal) predictor-corrector for the source, which
//! keeps the scheme second order in time. The first two steps are replaced
//! by four implicit-Euler half steps to damp the payoff kink.
//!
//! Boundaries: `Φ = 0` at the lower edge; at the upper edge a ghost node
//! imposes linearity in `x` (`Φ_xx = 0`, i.e. `Φ_yy = Φ_y`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::CallSpec;

/// Smallest accepted resolution in each direction.
pub const MIN_INTERVALS: usize = 64;

/// Default half-width of the log-price domain in units of `σ√T`.
pub const DEFAULT_HALF_WIDTH: f64 = 4.0;

/// Step halvings allowed before a step is declared divergent.
pub const MAX_HALVINGS: u32 = 10;

/// Prices below `−NEGATIVITY_RTOL · K` are treated as a failed step.
pub const NEGATIVITY_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// `Φ = 0` at `x_min` and `Φ_xx = 0` at `x_max`.
    #[default]
    ZeroLowerLinearUpper,
}

/// Space-time mesh and, after solving, the price surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    /// Log-uniform nodes on `[x_min, x_max]`.
    pub x_nodes: Vec<f64>,
    /// Uniform nodes on `[0, T]`.
    pub t_nodes: Vec<f64>,
    pub boundary: BoundaryPolicy,
    /// Keep every `record_every`-th time slice (plus `t = 0` and `t = T`).
    pub record_every: usize,
    /// Indices into `t_nodes` of the stored slices, increasing.
    pub recorded: Vec<usize>,
    /// `surface[k][j]` is the price at `t_nodes[recorded[k]]`, `x_nodes[j]`.
    pub surface: Vec<Vec<f64>>,
}

impl PdeGrid {
    /// `nx` and `nt` count intervals, so there are `nx + 1` price nodes.
    pub fn new(x_min: f64, x_max: f64, nx: usize, maturity: f64, nt: usize, strike: f64) -> Result<Self> {
        if !(x_min > 0.0) || !(x_max > x_min) {
            return Err(Error::Grid(format!("need 0 < x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if !(strike > x_min && strike < x_max) {
            return Err(Error::Grid(format!(
                "strike {strike} must lie strictly inside [{x_min}, {x_max}]"
            )));
        }
        if nx < MIN_INTERVALS || nt < MIN_INTERVALS {
            return Err(Error::Grid(format!(
                "resolution must be at least {MIN_INTERVALS}x{MIN_INTERVALS}, got {nx}x{nt}"
            )));
        }
        if !(maturity > 0.0) {
            return Err(Error::Grid("maturity must be positive".into()));
        }
        let (a, b) = (x_min.ln(), x_max.ln());
        let h = (b - a) / nx as f64;
        let mut x_nodes: Vec<f64> = (0..=nx).map(|j| (a + j as f64 * h).exp()).collect();
        x_nodes[0] = x_min;
        x_nodes[nx] = x_max;
        let dt = maturity / nt as f64;
        let mut t_nodes: Vec<f64> = (0..=nt).map(|n| n as f64 * dt).collect();
        t_nodes[nt] = maturity;
        Ok(Self {
            x_nodes,
            t_nodes,
            boundary: BoundaryPolicy::default(),
            record_every: 1,
            recorded: Vec::new(),
            surface: Vec::new(),
        })
    }

    /// Grid symmetric in `ln(x/K)` with half-width `half_width · σ√T` and the
    /// strike on the middle node (`nx` is rounded up to an even number).
    pub fn centred(spec: &CallSpec, nx: usize, nt: usize, half_width: f64) -> Result<Self> {
        let nx = nx + nx % 2;
        let w = half_width * spec.sigma * spec.maturity.sqrt();
        let mut g = Self::new(spec.k * (-w).exp(), spec.k * w.exp(), nx, spec.maturity, nt, spec.k)?;
        g.x_nodes[nx / 2] = spec.k;
        Ok(g)
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }

    pub fn nx(&self) -> usize {
        self.x_nodes.len() - 1
    }

    pub fn nt(&self) -> usize {
        self.t_nodes.len() - 1
    }

    pub fn maturity(&self) -> f64 {
        *self.t_nodes.last().expect("validated")
    }

    fn log_step(&self) -> f64 {
        (self.x_nodes[self.nx()].ln() - self.x_nodes[0].ln()) / self.nx() as f64
    }

    /// The stored slice at time `t`, if `t` is a recorded node.
    pub fn slice(&self, t: f64) -> Option<&[f64]> {
        let dt = self.maturity() / self.nt() as f64;
        let n = (t / dt).round();
        if (n * dt - t).abs() > 1e-9 * dt.max(1.0) || n < 0.0 {
            return None;
        }
        let k = self.recorded.binary_search(&(n as usize)).ok()?;
        Some(&self.surface[k])
    }

    /// Price at `(x, t)` by cubic interpolation in `ln x` on a recorded slice.
    pub fn value_at(&self, x: f64, t: f64) -> Result<f64> {
        let slice = self.slice(t).ok_or_else(|| {
            Error::Domain(format!("t = {t} is not a recorded time slice"))
        })?;
        let (lo, hi) = (self.x_nodes[0], self.x_nodes[self.nx()]);
        if !(x >= lo && x <= hi) {
            return Err(Error::Extrapolation {
                what: "underlying price",
                value: x,
                lo,
                hi,
            });
        }
        let f = (x.ln() - lo.ln()) / self.log_step();
        let n = slice.len();
        let i = (f.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let s = f - i as f64;
        let w = [
            -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
            s * (s - 2.0) * (s - 3.0) / 2.0,
            -s * (s - 1.0) * (s - 3.0) / 2.0,
            s * (s - 1.0) * (s - 2.0) / 6.0,
        ];
        Ok((0..4).map(|k| w[k] * slice[i + k]).sum())
    }
}

/// Constant-coefficient operator in backward time `θ = T − t`:
/// `V_θ = a V_yy + b V_y − r V − ρ √(V² + V_y²)`.
#[derive(Debug, Clone, Copy)]
struct Operator {
    a: f64,
    b: f64,
    r: f64,
    rho: f64,
    h: f64,
}

impl Operator {
    /// `V_y` at every node; the top node uses the linearity ghost value and
    /// the bottom node is a Dirichlet node.
    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len() - 1;
        out[0] = (v[1] - v[0]) / self.h;
        for j in 1..n {
            out[j] = (v[j + 1] - v[j - 1]) / (2.0 * self.h);
        }
        out[n] = self.top_gradient() * (v[n] - v[n - 1]);
    }

    /// Coefficient `c` with `V_y(top) = c (V_N − V_{N−1})` under `V_yy = V_y`.
    fn top_gradient(&self) -> f64 {
        let al = 1.0 / (self.h * self.h);
        let be = 1.0 / (2.0 * self.h);
        2.0 * al * be / (al - be)
    }

    /// Source `−ρ √(V² + V_y²)`, zero on the Dirichlet node.
    fn source(&self, v: &[f64], grad: &mut [f64], out: &mut [f64]) {
        self.gradient(v, grad);
        out[0] = 0.0;
        for j in 1..v.len() {
            out[j] = -self.rho * v[j].hypot(grad[j]);
        }
    }

    /// Tridiagonal stencil `(lower, diag, upper)` of the linear part at node
    /// `j ≥ 1`.
    fn stencil(&self, j: usize, n: usize) -> (f64, f64, f64) {
        let h2 = self.h * self.h;
        if j == n {
            let c = (self.a + self.b) * self.top_gradient();
            return (-c, c - self.r, 0.0);
        }
        let lo = self.a / h2 - self.b / (2.0 * self.h);
        let up = self.a / h2 + self.b / (2.0 * self.h);
        (lo, -2.0 * self.a / h2 - self.r, up)
    }

    /// `L v` for the linear part.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len() - 1;
        out[0] = 0.0;
        for j in 1..=n {
            let (l, d, u) = self.stencil(j, n);
            let up = if j < n { v[j + 1] } else { 0.0 };
            out[j] = l * v[j - 1] + d * v[j] + u * up;
        }
    }

    /// Solves `(I − θ dt L) x = rhs` for the interior and top nodes with
    /// `x_0 = 0`.
    fn solve_implicit(&self, theta_dt: f64, rhs: &[f64], out: &mut [f64]) {
        let n = rhs.len() - 1;
        let m = n; // unknowns 1..=n
        let mut c_prime = vec![0.0; m];
        let mut d_prime = vec![0.0; m];
        for (k, j) in (1..=n).enumerate() {
            let (l, d, u) = self.stencil(j, n);
            let (a, b, c) = (-theta_dt * l, 1.0 - theta_dt * d, -theta_dt * u);
            let a = if j == 1 { 0.0 } else { a };
            if k == 0 {
                c_prime[k] = c / b;
                d_prime[k] = rhs[j] / b;
            } else {
                let den = b - a * c_prime[k - 1];
                c_prime[k] = c / den;
                d_prime[k] = (rhs[j] - a * d_prime[k - 1]) / den;
            }
        }
        out[0] = 0.0;
        out[n] = d_prime[m - 1];
        for k in (0..m - 1).rev() {
            out[k + 1] = d_prime[k] - c_prime[k] * out[k + 2];
        }
    }
}

struct Stepper {
    op: Operator,
    lv: Vec<f64>,
    grad: Vec<f64>,
    s0: Vec<f64>,
    s1: Vec<f64>,
    rhs: Vec<f64>,
    pred: Vec<f64>,
}

impl Stepper {
    fn new(op: Operator, len: usize) -> Self {
        Self {
            op,
            lv: vec![0.0; len],
            grad: vec![0.0; len],
            s0: vec![0.0; len],
            s1: vec![0.0; len],
            rhs: vec![0.0; len],
            pred: vec![0.0; len],
        }
    }

    /// One θ-scheme step (θ = ½: Crank-Nicolson, θ = 1: implicit Euler) with
    /// a Heun predictor-corrector for the source.
    fn step(&mut self, v: &[f64], dt: f64, theta: f64, out: &mut [f64]) {
        let op = self.op;
        op.apply(v, &mut self.lv);
        op.source(v, &mut self.grad, &mut self.s0);
        for j in 0..v.len() {
            self.rhs[j] = v[j] + (1.0 - theta) * dt * self.lv[j] + dt * self.s0[j];
        }
        op.solve_implicit(theta * dt, &self.rhs, &mut self.pred);
        op.source(&self.pred, &mut self.grad, &mut self.s1);
        for j in 0..v.len() {
            self.rhs[j] =
                v[j] + (1.0 - theta) * dt * self.lv[j] + 0.5 * dt * (self.s0[j] + self.s1[j]);
        }
        op.solve_implicit(theta * dt, &self.rhs, out);
    }

    /// Advances by `dt`, splitting the step while the result is not finite
    /// or not bounded below.
    fn advance(&mut self, v: &[f64], dt: f64, theta: f64, floor: f64, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        for halvings in 0..=MAX_HALVINGS {
            let parts = 1usize << halvings;
            let sub = dt / parts as f64;
            let mut cur = v.to_vec();
            let mut ok = true;
            for _ in 0..parts {
                self.step(&cur, sub, theta, &mut out);
                if out.iter().any(|x| !x.is_finite() || *x < floor) {
                    ok = false;
                    break;
                }
                std::mem::swap(&mut cur, &mut out);
            }
            if ok {
                return Ok(cur);
            }
        }
        Err(Error::NonConvergent {
            halvings: MAX_HALVINGS,
            t,
        })
    }
}

fn march(spec: &CallSpec, grid: &PdeGrid, op: Operator) -> Result<PdeGrid> {
    spec.validate()?;
    let nt = grid.nt();
    let dt = grid.maturity() / nt as f64;
    if (grid.maturity() - spec.maturity).abs() > 1e-12 * spec.maturity {
        return Err(Error::GridIncompatible(format!(
            "grid maturity {} differs from the contract maturity {}",
            grid.maturity(),
            spec.maturity
        )));
    }
    let mut v: Vec<f64> = grid.x_nodes.iter().map(|x| (x - spec.k).max(0.0)).collect();
    v[0] = 0.0;
    let floor = -NEGATIVITY_RTOL * spec.k;
    let every = grid.record_every.max(1);
    let mut recorded = vec![nt];
    let mut surface = vec![v.clone()];
    let mut stepper = Stepper::new(op, v.len());
    for n in (0..nt).rev() {
        let t = grid.t_nodes[n];
        v = if n + 2 >= nt {
            // start-up: two implicit-Euler half steps per step
            let half = stepper.advance(&v, 0.5 * dt, 1.0, floor, t)?;
            stepper.advance(&half, 0.5 * dt, 1.0, floor, t)?
        } else {
            stepper.advance(&v, dt, 0.5, floor, t)?
        };
        if n == 0 || n % every == 0 {
            recorded.push(n);
            surface.push(v.clone());
        }
    }
    recorded.reverse();
    surface.reverse();
    Ok(PdeGrid {
        recorded,
        surface,
        ..grid.clone()
    })
}

/// Solves for the discounted price `Φ(t, X)`.
pub fn solve(spec: &CallSpec, grid: &PdeGrid) -> Result<PdeGrid> {
    let a = 0.5 * spec.sigma * spec.sigma;
    march(
        spec,
        grid,
        Operator {
            a,
            b: -a,
            r: 0.0,
            rho: spec.rho,
            h: grid.log_step(),
        },
    )
}

/// Solves for the undiscounted price `Ψ(t, S)` with constant rate `spec.r`.
pub fn solve_undiscounted(spec: &CallSpec, grid: &PdeGrid) -> Result<PdeGrid> {
    let a = 0.5 * spec.sigma * spec.sigma;
    march(
        spec,
        grid,
        Operator {
            a,
            b: spec.r - a,
            r: spec.r,
            rho: spec.rho,
            h: grid.log_step(),
        },
    )
}

/// Richardson extrapolation `(4 P_{2n} − P_n)/3` of prices at `probes`
/// (pairs `(x, t)` with `t ∈ {0, T}` or on both time grids), using centred
/// `n × n` and `2n × 2n` grids.
pub fn richardson_prices(
    spec: &CallSpec,
    n: usize,
    probes: &[(f64, f64)],
    undiscounted: bool,
) -> Result<Vec<f64>> {
    let run = |m: usize| -> Result<Vec<f64>> {
        let grid = PdeGrid::centred(spec, m, m, DEFAULT_HALF_WIDTH)?.with_record_every(m);
        let sol = if undiscounted {
            solve_undiscounted(spec, &grid)?
        } else {
            solve(spec, &grid)?
        };
        probes.iter().map(|&(x, t)| sol.value_at(x, t)).collect()
    };
    let coarse = run(n)?;
    let fine = run(2 * n)?;
    Ok(coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::bs_call;

    fn spec(rho: f64, r: f64) -> CallSpec {
        CallSpec::new(100.0, 1.0, 0.2, rho, r).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(PdeGrid::new(0.0, 200.0, 64, 1.0, 64, 100.0).is_err());
        assert!(PdeGrid::new(50.0, 90.0, 64, 1.0, 64, 100.0).is_err());
        assert!(PdeGrid::new(50.0, 200.0, 32, 1.0, 64, 100.0).is_err());
        let g = PdeGrid::centred(&spec(0.0, 0.0), 65, 64, 4.0).unwrap();
        assert_eq!(g.nx(), 66);
        assert_eq!(g.x_nodes[33], 100.0);
    }

    #[test]
    fn classical_limit_at_the_money() {
        let s = spec(0.0, 0.0);
        let g = PdeGrid::centred(&s, 256, 256, DEFAULT_HALF_WIDTH).unwrap();
        let sol = solve(&s, &g).unwrap();
        let p = sol.value_at(100.0, 0.0).unwrap();
        assert!((p - 7.9656).abs() < 5e-3, "{p}");
    }

    #[test]
    fn terminal_slice_and_lower_boundary() {
        let s = spec(0.02, 0.0);
        let g = PdeGrid::centred(&s, 128, 128, DEFAULT_HALF_WIDTH).unwrap();
        let sol = solve(&s, &g).unwrap();
        let last = sol.slice(1.0).unwrap();
        for (x, v) in sol.x_nodes.iter().zip(last) {
            assert_eq!(*v, (x - 100.0f64).max(0.0));
        }
        assert!(sol.surface.iter().all(|row| row[0] == 0.0));
        assert!(sol.surface.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_rate_undiscounted_is_discounted() {
        let s = spec(0.02, 0.0);
        let g = PdeGrid::centred(&s, 128, 128, DEFAULT_HALF_WIDTH).unwrap();
        assert_eq!(solve(&s, &g).unwrap(), solve_undiscounted(&s, &g).unwrap());
    }

    #[test]
    fn undiscounted_classical_limit_with_rate() {
        let s = spec(0.0, 0.05);
        let g = PdeGrid::centred(&s, 256, 256, DEFAULT_HALF_WIDTH).unwrap();
        let p = solve_undiscounted(&s, &g).unwrap().value_at(100.0, 0.0).unwrap();
        let bs = bs_call(100.0, 100.0, 1.0, 0.2, 0.05);
        assert!((p - bs).abs() < 0.01, "{p} vs {bs}");
    }

    #[test]
    fn second_order_convergence() {
        let s = spec(0.02, 0.0);
        let probe = [(100.0, 0.0)];
        let reference = richardson_prices(&s, 512, &probe, false).unwrap()[0];
        let at = |n: usize| {
            let g = PdeGrid::centred(&s, n, n, DEFAULT_HALF_WIDTH).unwrap();
            solve(&s, &g).unwrap().value_at(100.0, 0.0).unwrap()
        };
        let e1 = (at(64) - reference).abs();
        let e2 = (at(128) - reference).abs();
        let ratio = e1 / e2;
        assert!((3.0..5.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn comparison_principle() {
        // the source −ρ√(Φ² + Φ_y²) is nonincreasing in ρ
        let g = PdeGrid::centred(&spec(0.0, 0.0), 128, 128, DEFAULT_HALF_WIDTH).unwrap();
        let lo = solve(&spec(0.01, 0.0), &g).unwrap();
        let hi = solve(&spec(0.03, 0.0), &g).unwrap();
        for (a, b) in lo.surface.iter().flatten().zip(hi.surface.iter().flatten()) {
            assert!(*b <= *a + 1e-12);
        }
    }

    #[test]
    fn off_slice_queries_fail() {
        let s = spec(0.0, 0.0);
        let g = PdeGrid::centred(&s, 64, 64, 4.0).unwrap().with_record_every(64);
        let sol = solve(&s, &g).unwrap();
        assert!(sol.value_at(100.0, 0.5).is_err());
        assert!(sol.value_at(1.0, 0.0).is_err());
        assert_eq!(sol.recorded, vec![0, 64]);
    }
}
