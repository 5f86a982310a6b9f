//! Deflators, term structures and the algebra acting on them.
//!
//! A [`Gauge`] models one instrument as a deflator `D_t` sampled on a uniform
//! valuation grid together with a term structure `P(t, s)` sampled on uniform
//! maturity offsets `s - t = j * ds`. Cashflow intensities act on gauges by
//! [`gauge_transform`], and two transforms compose through [`convolve`].

mod io;

pub use io::{
    read_deflator_csv, read_intensity_csv, read_term_structure_csv, write_deflator_csv,
    write_intensity_csv, write_term_structure_csv,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// Relative tolerance used to decide whether two grid spacings agree.
const SPACING_RTOL: f64 = 1e-9;

/// Tolerance on the diagonal `P(t, t) = 1`.
pub const DIAGONAL_TOL: f64 = 1e-12;

fn same_spacing(a: f64, b: f64) -> bool {
    (a - b).abs() <= SPACING_RTOL * a.abs().max(b.abs())
}

/// Uniform grid `start + i * step`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    step: f64,
    len: usize,
}

impl TimeGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Result<Self> {
        ensure_finite(start, "grid start")?;
        ensure_positive(step, "grid step")?;
        if len == 0 {
            return Err(Error::Grid("time grid must contain at least one node".into()));
        }
        Ok(Self { start, step, len })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.at(i))
    }

    fn matches(&self, other: &TimeGrid) -> bool {
        self.len == other.len
            && same_spacing(self.step, other.step)
            && (self.start - other.start).abs() <= SPACING_RTOL * self.step
    }
}

/// Deterministic cashflow intensity `π_h` sampled at `h = k * dh`.
///
/// A single sample represents a point mass at `h = 0` carrying mass
/// `dh * samples[0]`; [`CashflowIntensity::dirac`] is the unit mass, stored as
/// one sample of height `1 / dh` so that `π ∗ δ = π` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashflowIntensity {
    dh: f64,
    samples: Vec<f64>,
}

impl CashflowIntensity {
    pub fn new(dh: f64, samples: Vec<f64>) -> Result<Self> {
        ensure_positive(dh, "intensity spacing dh")?;
        if samples.is_empty() {
            return Err(Error::Grid("cashflow intensity needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite intensity sample {bad}")));
        }
        Ok(Self { dh, samples })
    }

    /// Unit point mass at `h = 0`.
    pub fn dirac(dh: f64) -> Result<Self> {
        ensure_positive(dh, "intensity spacing dh")?;
        Self::new(dh, vec![1.0 / dh])
    }

    /// Samples `f(k * dh)` for `k * dh <= support_end`.
    pub fn from_fn(dh: f64, support_end: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        ensure_positive(dh, "intensity spacing dh")?;
        if !(support_end >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "support end must be non-negative, got {support_end}"
            )));
        }
        let n = (support_end / dh + 1e-9).floor() as usize + 1;
        Self::new(dh, (0..n).map(|k| f(k as f64 * dh)).collect())
    }

    pub fn zero(dh: f64, support_end: f64) -> Result<Self> {
        Self::from_fn(dh, support_end, |_| 0.0)
    }

    pub fn dh(&self) -> f64 {
        self.dh
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn support_end(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dh
    }

    pub fn is_point_mass(&self) -> bool {
        self.samples.len() == 1
    }

    /// Value at `h`, linearly interpolated; zero beyond the support.
    pub fn value_at(&self, h: f64) -> f64 {
        if h < 0.0 || h > self.support_end() + SPACING_RTOL * self.dh {
            return 0.0;
        }
        let x = h / self.dh;
        let k = (x.floor() as usize).min(self.samples.len() - 1);
        if k + 1 >= self.samples.len() {
            return self.samples[k];
        }
        let frac = x - k as f64;
        self.samples[k] * (1.0 - frac) + self.samples[k + 1] * frac
    }

    /// Quadrature weights used whenever the intensity is integrated against a
    /// function: trapezoidal for sampled densities, `dh` for a point mass.
    pub(crate) fn quadrature_weights(&self) -> Vec<f64> {
        let n = self.samples.len();
        if n == 1 {
            return vec![self.dh];
        }
        let mut w = vec![self.dh; n];
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
        w
    }

    /// `∫ π_h dh` under the quadrature rule of [`Self::quadrature_weights`].
    pub fn total_mass(&self) -> f64 {
        self.quadrature_weights()
            .iter()
            .zip(&self.samples)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Re-expresses the intensity on spacing `dh`.
    ///
    /// Point masses keep their mass; sampled densities are linearly
    /// interpolated. The support end must be a whole number of new steps.
    pub fn resample(&self, dh: f64) -> Result<Self> {
        ensure_positive(dh, "target spacing")?;
        if same_spacing(dh, self.dh) {
            return Ok(self.clone());
        }
        if self.is_point_mass() {
            return Self::new(dh, vec![self.samples[0] * self.dh / dh]);
        }
        let steps = self.support_end() / dh;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(Error::GridIncompatible(format!(
                "support end {} is not a multiple of the target spacing {dh}",
                self.support_end()
            )));
        }
        let n = steps.round() as usize + 1;
        Self::new(dh, (0..n).map(|k| self.value_at(k as f64 * dh)).collect())
    }
}

/// `(π ∗ ν)_t = ∫_0^t π_h ν_{t-h} dh` on the common grid, as a discrete
/// convolution scaled by `dh`. Mismatched spacings are resampled onto the finer
/// of the two grids first.
pub fn convolve(pi: &CashflowIntensity, nu: &CashflowIntensity) -> Result<CashflowIntensity> {
    let dh = pi.dh.min(nu.dh);
    let a = pi.resample(dh)?;
    let b = nu.resample(dh)?;
    let n = a.samples.len() + b.samples.len() - 1;
    let mut out = vec![0.0; n];
    for (i, &x) in a.samples.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.samples.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out.iter_mut().for_each(|v| *v *= dh);
    CashflowIntensity::new(dh, out)
}

/// Deflator plus term structure on a uniform valuation grid.
///
/// `term[i][j]` holds `P(t_i, t_i + j * maturity_step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    times: TimeGrid,
    deflator: Vec<f64>,
    maturity_step: f64,
    term: Vec<Vec<f64>>,
}

impl Gauge {
    pub fn new(
        times: TimeGrid,
        deflator: Vec<f64>,
        maturity_step: f64,
        term: Vec<Vec<f64>>,
    ) -> Result<Self> {
        ensure_positive(maturity_step, "maturity step")?;
        if deflator.len() != times.len() || term.len() != times.len() {
            return Err(Error::Shape(format!(
                "gauge has {} times but {} deflator values and {} term-structure rows",
                times.len(),
                deflator.len(),
                term.len()
            )));
        }
        let offsets = term[0].len();
        if offsets == 0 {
            return Err(Error::Grid("term structure needs at least one maturity".into()));
        }
        for (i, row) in term.iter().enumerate() {
            let t = times.at(i);
            if row.len() != offsets {
                return Err(Error::Shape(format!(
                    "term-structure row at t = {t} has {} maturities, expected {offsets}",
                    row.len()
                )));
            }
            if (row[0] - 1.0).abs() > DIAGONAL_TOL {
                return Err(Error::InvalidInput(format!(
                    "P(t, t) must equal 1, got {} at t = {t}",
                    row[0]
                )));
            }
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::Domain(format!(
                    "term structure must be positive, got {p} at t = {t}"
                )));
            }
        }
        if let Some(d) = deflator.iter().find(|d| !d.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite deflator value {d}")));
        }
        Ok(Self {
            times,
            deflator,
            maturity_step,
            term,
        })
    }

    /// Samples `deflator(t)` and `term(t, s)` on the given grids.
    pub fn from_fn(
        times: TimeGrid,
        maturity_step: f64,
        offsets: usize,
        deflator: impl Fn(f64) -> f64,
        term: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let d = times.nodes().map(&deflator).collect();
        let p = times
            .nodes()
            .map(|t| {
                (0..offsets)
                    .map(|j| term(t, t + j as f64 * maturity_step))
                    .collect()
            })
            .collect();
        Self::new(times, d, maturity_step, p)
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn deflator(&self) -> &[f64] {
        &self.deflator
    }

    pub fn maturity_step(&self) -> f64 {
        self.maturity_step
    }

    pub fn offsets(&self) -> usize {
        self.term[0].len()
    }

    pub fn term_structure(&self) -> &[Vec<f64>] {
        &self.term
    }

    /// `P(t_i, t_i + j * ds)`.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.term[i][j]
    }

    fn shares_grids(&self, other: &Gauge) -> bool {
        self.times.matches(&other.times)
            && same_spacing(self.maturity_step, other.maturity_step)
            && self.offsets() == other.offsets()
    }
}

/// Applies the gauge transform induced by `pi`:
///
/// ```text
/// D^π_t    = D_t ∫ π_h P(t, t+h) dh
/// P^π(t,s) = ∫ π_h P(t, s+h) dh / ∫ π_h P(t, t+h) dh
/// ```
///
/// Integrals use the trapezoidal rule on the maturity grid. The output keeps
/// the maturity offsets whose shifted integrand stays inside the input
/// horizon.
pub fn gauge_transform(g: &Gauge, pi: &CashflowIntensity) -> Result<Gauge> {
    let ds = g.maturity_step;
    let pi = pi.resample(ds)?;
    let weights: Vec<f64> = pi
        .quadrature_weights()
        .iter()
        .zip(&pi.samples)
        .map(|(w, v)| w * v)
        .collect();
    let width = weights.len();
    if width > g.offsets() {
        return Err(Error::Horizon {
            needed: width,
            available: g.offsets(),
        });
    }
    let out_offsets = g.offsets() - width + 1;

    let mut deflator = Vec::with_capacity(g.times.len());
    let mut term = Vec::with_capacity(g.times.len());
    for (i, row) in g.term.iter().enumerate() {
        let shifted = |j: usize| -> f64 {
            weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[j + k])
                .sum()
        };
        let denominator = shifted(0);
        if !(denominator > 0.0) {
            return Err(Error::DegenerateTransform {
                t: g.times.at(i),
                value: denominator,
            });
        }
        deflator.push(g.deflator[i] * denominator);
        let mut p_row = Vec::with_capacity(out_offsets);
        p_row.push(1.0);
        p_row.extend((1..out_offsets).map(|j| shifted(j) / denominator));
        term.push(p_row);
    }
    Gauge::new(g.times, deflator, ds, term)
}

/// Instantaneous forward rates `f(t_i, t_i + j * ds)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSurface {
    times: TimeGrid,
    maturity_step: f64,
    values: Vec<Vec<f64>>,
}

impl ForwardSurface {
    pub fn new(times: TimeGrid, maturity_step: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        ensure_positive(maturity_step, "maturity step")?;
        if values.len() != times.len() {
            return Err(Error::Shape(format!(
                "{} forward rows for {} valuation times",
                values.len(),
                times.len()
            )));
        }
        let offsets = values.first().map_or(0, Vec::len);
        if values.iter().any(|r| r.len() != offsets) {
            return Err(Error::Shape("ragged forward-rate surface".into()));
        }
        Ok(Self {
            times,
            maturity_step,
            values,
        })
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn maturity_step(&self) -> f64 {
        self.maturity_step
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn offsets(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// `f(t, s) = -∂_s log P(t, s)`: central differences inside the maturity
/// grid, second-order one-sided differences at both edges.
pub fn forward_rate(g: &Gauge) -> Result<ForwardSurface> {
    let n = g.offsets();
    if n < 2 {
        return Err(Error::Grid(
            "forward rates need at least two maturity offsets".into(),
        ));
    }
    let ds = g.maturity_step;
    let values = g
        .term
        .iter()
        .map(|row| {
            let lp: Vec<f64> = row.iter().map(|p| p.ln()).collect();
            let mut f = vec![0.0; n];
            if n == 2 {
                let slope = -(lp[1] - lp[0]) / ds;
                f[0] = slope;
                f[1] = slope;
                return f;
            }
            f[0] = -(-3.0 * lp[0] + 4.0 * lp[1] - lp[2]) / (2.0 * ds);
            for j in 1..n - 1 {
                f[j] = -(lp[j + 1] - lp[j - 1]) / (2.0 * ds);
            }
            f[n - 1] = -(3.0 * lp[n - 1] - 4.0 * lp[n - 2] + lp[n - 3]) / (2.0 * ds);
            f
        })
        .collect();
    ForwardSurface::new(g.times, ds, values)
}

/// Rebuilds `P(t, s) = exp(-∫_t^s f(t, u) du)` by cumulative trapezoidal
/// integration along each maturity row.
pub fn term_structure_from_forward(f: &ForwardSurface) -> Vec<Vec<f64>> {
    let ds = f.maturity_step;
    f.values
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            let mut out = Vec::with_capacity(row.len());
            out.push(1.0);
            for w in row.windows(2) {
                acc += 0.5 * ds * (w[0] + w[1]);
                out.push((-acc).exp());
            }
            out
        })
        .collect()
}

/// Short rate read off the first maturity node after the diagonal,
/// `r_t = f(t, t + ds)`. Converges to the limit `s -> t+` as `ds -> 0`.
pub fn short_rate(f: &ForwardSurface) -> Result<Vec<f64>> {
    if f.offsets() < 2 {
        return Err(Error::Grid(
            "short rate needs a maturity node beyond the diagonal".into(),
        ));
    }
    Ok(f.values.iter().map(|row| row[1]).collect())
}

/// Nominal holdings `x ∈ R^N` of a portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioNominals(pub Vec<f64>);

impl PortfolioNominals {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidInput("portfolio needs at least one asset".into()));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite nominal {v}")));
        }
        Ok(Self(x))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Value weights `w_j = x_j D^j / Σ_k x_k D^k` for one valuation time.
pub fn portfolio_weights_at(x: &[f64], deflators: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != deflators.len() {
        return Err(Error::Shape(format!(
            "{} nominals for {} deflators",
            x.len(),
            deflators.len()
        )));
    }
    let contributions: Vec<f64> = x.iter().zip(deflators).map(|(a, d)| a * d).collect();
    let total: f64 = contributions.iter().sum();
    let scale: f64 = contributions.iter().map(|c| c.abs()).sum();
    if total == 0.0 || total.abs() <= 1e-14 * scale || !total.is_finite() {
        return Err(Error::DegeneratePortfolio { t });
    }
    Ok(contributions.iter().map(|c| c / total).collect())
}

fn check_portfolio(x: &PortfolioNominals, gauges: &[Gauge]) -> Result<()> {
    if gauges.is_empty() {
        return Err(Error::InvalidInput("portfolio needs at least one gauge".into()));
    }
    if x.len() != gauges.len() {
        return Err(Error::Shape(format!(
            "{} nominals for {} gauges",
            x.len(),
            gauges.len()
        )));
    }
    if gauges.iter().any(|g| !g.shares_grids(&gauges[0])) {
        return Err(Error::GridIncompatible(
            "portfolio gauges must share valuation and maturity grids".into(),
        ));
    }
    Ok(())
}

/// Per-time value weights of the portfolio, `weights[i][j]`.
pub fn portfolio_weights(x: &PortfolioNominals, gauges: &[Gauge]) -> Result<Vec<Vec<f64>>> {
    check_portfolio(x, gauges)?;
    let times = gauges[0].times;
    (0..times.len())
        .map(|i| {
            let d: Vec<f64> = gauges.iter().map(|g| g.deflator[i]).collect();
            portfolio_weights_at(&x.0, &d, times.at(i))
        })
        .collect()
}

/// Portfolio gauge: `D^x = Σ x_j D^j`, forward rate the value-weighted average
/// of the constituents' forward rates, `P^x = exp(-∫ f^x)`.
///
/// Since `∫_t^s f^j = -log P^j(t, s)`, the integral is evaluated in closed form
/// as `P^x = Π_j (P^j)^{w_j}`, which keeps single-asset and identical-asset
/// portfolios exact.
pub fn portfolio_gauge(x: &PortfolioNominals, gauges: &[Gauge]) -> Result<Gauge> {
    let weights = portfolio_weights(x, gauges)?;
    let first = &gauges[0];
    let deflator = (0..first.times.len())
        .map(|i| x.0.iter().zip(gauges).map(|(a, g)| a * g.deflator[i]).sum())
        .collect();
    let term = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            (0..first.offsets())
                .map(|j| {
                    let log_p: f64 = w
                        .iter()
                        .zip(gauges)
                        .map(|(wj, g)| wj * g.term[i][j].ln())
                        .sum();
                    log_p.exp()
                })
                .collect()
        })
        .collect();
    Gauge::new(first.times, deflator, first.maturity_step, term)
}

/// `r^x_t = Σ_j w_j r^j_t` with value weights `w_j`.
pub fn portfolio_short_rate(x: &PortfolioNominals, gauges: &[Gauge]) -> Result<Vec<f64>> {
    let weights = portfolio_weights(x, gauges)?;
    let rates = gauges
        .iter()
        .map(|g| short_rate(&forward_rate(g)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(i, w)| w.iter().zip(&rates).map(|(wj, r)| wj * r[i]).sum())
        .collect())
}
