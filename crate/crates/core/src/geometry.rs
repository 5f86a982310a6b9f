//! Arbitrage geometry of Itô market models `dŜ = Ŝ(α dt + σ dW)`.
//!
//! The arbitrage measure is the component of `α + r` orthogonal to the range
//! of the volatility matrix. It is exposed twice: as the coordinate vector
//! [`rho`] in a canonical orthonormal basis of `Range(σ)^⊥`, and as the norm
//! [`zc_residual`] of the orthogonal projection. Both vanish exactly when the
//! zero-curvature condition `α + r ∈ Range(σ)` holds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Singular values below `RANK_RTOL * σ_max` count as zero.
pub const RANK_RTOL: f64 = 1e-12;

/// Smallest time accepted by [`curvature_spread`] by default.
pub const DEFAULT_T_MIN: f64 = 1e-6;

/// Drift, volatility loadings and short rates of an `N`-asset, `K`-factor
/// model at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoCoefficients {
    pub alpha: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub r: DVector<f64>,
    pub t: f64,
}

impl ItoCoefficients {
    pub fn new(alpha: DVector<f64>, sigma: DMatrix<f64>, r: DVector<f64>, t: f64) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() == 0 {
            return Err(Error::Shape("volatility matrix must be at least 1x1".into()));
        }
        if alpha.len() != n || r.len() != n {
            return Err(Error::Shape(format!(
                "sigma has {n} rows but alpha has {} and r has {} entries",
                alpha.len(),
                r.len()
            )));
        }
        if alpha.iter().chain(sigma.iter()).chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Itô coefficients must be finite".into()));
        }
        ensure_finite(t, "t")?;
        Ok(Self { alpha, sigma, r, t })
    }

    /// Builds coefficients from row-major slices; `sigma[j]` is the loading
    /// row of asset `j`.
    pub fn from_rows(alpha: &[f64], sigma: &[Vec<f64>], r: &[f64], t: f64) -> Result<Self> {
        let n = sigma.len();
        let k = sigma.first().map_or(0, Vec::len);
        if sigma.iter().any(|row| row.len() != k) {
            return Err(Error::Shape("ragged volatility matrix".into()));
        }
        let sigma = DMatrix::from_fn(n, k, |i, j| sigma[i][j]);
        Self::new(
            DVector::from_column_slice(alpha),
            sigma,
            DVector::from_column_slice(r),
            t,
        )
    }

    pub fn assets(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn factors(&self) -> usize {
        self.sigma.ncols()
    }

    /// `α + r`.
    pub fn excess_drift(&self) -> DVector<f64> {
        &self.alpha + &self.r
    }
}

/// Orthonormal basis `J` of `Range(σ)^⊥ = ker(σ†)`, one column per vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub j: DMatrix<f64>,
}

impl KernelBasis {
    /// Dimension `B = N - rank(σ)`.
    pub fn dim(&self) -> usize {
        self.j.ncols()
    }
}

/// Standard-basis diagonal `(A_11, …, A_NN)`.
pub fn diag_of(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "diagonal needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.diagonal())
}

/// `Σ_j (A f_j · f_j) f_j` for the orthonormal basis given by the columns of
/// `basis`, expressed in standard coordinates.
///
/// This equals `U diag(U† A U)` and generally differs from [`diag_of`] when
/// `A` is not diagonal in the chosen basis.
pub fn diag_in_basis(a: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || basis.nrows() != a.nrows() || basis.ncols() != a.ncols() {
        return Err(Error::Shape("basis and operator dimensions differ".into()));
    }
    let mut out = DVector::zeros(a.nrows());
    for f in basis.column_iter() {
        let af = a * f;
        out += f * af.dot(&f);
    }
    Ok(out)
}

/// Orthogonal projections onto `Range(σ)` and its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProjections {
    pub range: DMatrix<f64>,
    pub perp: DMatrix<f64>,
    pub rank: usize,
}

fn range_basis(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma.nrows();
    if sigma.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = sigma.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors were requested");
    let s_max = svd.singular_values.max();
    if !(s_max > 0.0) {
        return DMatrix::zeros(n, 0);
    }
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > RANK_RTOL * s_max)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(n, keep.len(), |i, c| u[(i, keep[c])])
}

/// Numerical rank of `σ` under [`RANK_RTOL`].
pub fn numerical_rank(sigma: &DMatrix<f64>) -> usize {
    range_basis(sigma).ncols()
}

/// Projections built from the left singular vectors of `σ`.
pub fn range_projections(sigma: &DMatrix<f64>) -> RangeProjections {
    let n = sigma.nrows();
    let u = range_basis(sigma);
    let range = &u * u.transpose();
    let perp = DMatrix::identity(n, n) - &range;
    RangeProjections {
        range,
        perp,
        rank: u.ncols(),
    }
}

/// Canonical orthonormal basis of `Range(σ)^⊥`.
///
/// The complement projector is orthonormalised by pivoted Gram-Schmidt over
/// its columns (largest residual first, ties to the lowest index), and each
/// basis vector is oriented so that its first nonzero entry is positive.
pub fn kernel_basis(sigma: &DMatrix<f64>) -> KernelBasis {
    let proj = range_projections(sigma);
    let n = sigma.nrows();
    let dim = n - proj.rank;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let mut used = vec![false; n];
    for _ in 0..dim {
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for c in 0..n {
            if used[c] {
                continue;
            }
            let mut v = proj.perp.column(c).into_owned();
            // two passes keep the residual orthogonal to the accepted vectors
            for _ in 0..2 {
                for q in &basis {
                    let d = q.dot(&v);
                    v.axpy(-d, q, 1.0);
                }
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|(_, _, b)| norm > *b) {
                best = Some((c, v, norm));
            }
        }
        let (c, mut v, norm) = best.expect("complement dimension bounds the loop");
        used[c] = true;
        v /= norm;
        let scale = v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
            if *first < 0.0 {
                v = -v;
            }
        }
        basis.push(v);
    }
    let j = if basis.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&basis)
    };
    KernelBasis { j }
}

/// Arbitrage measure `ρ = J†(α + r)` in the canonical kernel basis.
pub fn rho(c: &ItoCoefficients) -> DVector<f64> {
    let basis = kernel_basis(&c.sigma);
    basis.j.transpose() * c.excess_drift()
}

/// `‖P_⊥(α + r)‖₂`, zero exactly when `α + r ∈ Range(σ)`.
pub fn zc_residual(c: &ItoCoefficients) -> f64 {
    let proj = range_projections(&c.sigma);
    (proj.perp * c.excess_drift()).norm()
}

/// Cross-asset spread of `𝒟 log Ŝ_t + r_t`.
///
/// With `𝒟 log Ŝ_t = α − ½ diag(σσ†) + σ W_t / (2t)` the returned vector is
/// `v − mean(v)`; it vanishes for every `W_t` exactly when the portfolio
/// instantaneous return is independent of the nominals.
pub fn curvature_spread(c: &ItoCoefficients, w: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    curvature_spread_with_floor(c, w, t, DEFAULT_T_MIN)
}

/// [`curvature_spread`] with an explicit lower bound on `t`.
pub fn curvature_spread_with_floor(
    c: &ItoCoefficients,
    w: &DVector<f64>,
    t: f64,
    t_min: f64,
) -> Result<DVector<f64>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "curvature spread needs t > 0, got {t}"
        )));
    }
    if t < t_min {
        return Err(Error::Domain(format!(
            "t = {t} is below t_min = {t_min}; the W_t/(2t) term is singular at 0"
        )));
    }
    if w.len() != c.factors() {
        return Err(Error::Shape(format!(
            "W_t has {} entries for {} factors",
            w.len(),
            c.factors()
        )));
    }
    let sst = &c.sigma * c.sigma.transpose();
    let v = &c.alpha - diag_of(&sst)? * 0.5 + &c.sigma * w / (2.0 * t) + &c.r;
    let mean = v.mean();
    Ok(v.map(|x| x - mean))
}

/// Deflator `β_t = exp(-∫_0^t C_u du)` by cumulative trapezoidal integration
/// over the sample grid; `β` at the first node is 1.
pub fn implied_beta(c: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if c.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} samples of C on a grid of {} nodes",
            c.len(),
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Grid("implied beta grid must be increasing".into()));
    }
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(c.len());
    if !c.is_empty() {
        out.push(1.0);
    }
    for i in 1..c.len() {
        acc += 0.5 * (grid[i] - grid[i - 1]) * (c[i] + c[i - 1]);
        out.push((-acc).exp());
    }
    Ok(out)
}

/// Converts `ρ` to the alternative arbitrage measure `ρ̃` of the equivalent
/// PDE written with `[1 + q² − q]^{1/2}`, where `q = X Φ_x / Φ`:
///
/// ```text
/// ρ̃ = −(1/√2) · sqrt((1 + q²) / (1 − q + q²)) · ρ
/// ```
pub fn rho_tilde(rho: f64, x: f64, phi: f64, dphi_dx: f64) -> Result<f64> {
    if phi == 0.0 {
        return Err(Error::Domain("rho_tilde needs a nonzero price".into()));
    }
    let q = x * dphi_dx / phi;
    let den = 1.0 - q + q * q;
    if !(den > 0.0) {
        return Err(Error::Domain(format!(
            "rho_tilde denominator must be positive, got {den}"
        )));
    }
    Ok(-std::f64::consts::FRAC_1_SQRT_2 * ((1.0 + q * q) / den).sqrt() * rho)
}
