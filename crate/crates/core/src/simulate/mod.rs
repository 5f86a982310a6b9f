//! Monte Carlo ensembles of the Itô dynamics `dŜ = Ŝ(α dt + σ dW)` and
//! ensemble estimators built on them.
//!
//! Paths are generated with the exact log-Euler scheme
//! `Ŝ_{t+dt} = Ŝ_t exp((α − ½diag(σσ†)) dt + σ ΔW)`. Path `p` draws its
//! Brownian increments from a ChaCha8 stream seeded with the master seed and
//! positioned on stream `p`, so every path is reproducible on its own and
//! the ensemble does not depend on the number of worker threads.

pub mod estimators;
pub mod io;
pub mod nelson;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure_positive, Error, Result};
use crate::geometry::ItoCoefficients;

pub use estimators::{
    empirical_rho, instantaneous_return, self_financing_residual, short_rates_on_grid,
    ReturnPoint, RhoPoint, SelfFinancingPoint, RHO_SE_FLOOR,
};
pub use io::{read_ensemble, write_ensemble, write_ensemble_csv};
pub use nelson::{
    bin_compare, knn_means, mean_se, nelson_derivatives, Bin, ConditioningState, EstimatorConfig,
    NelsonSeries,
};

/// `M` paths of `len` time points with `dim` components each, stored
/// path-major: element `(p, i, d)` sits at `(p · len + i) · dim + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathArray {
    paths: usize,
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PathArray {
    pub fn zeros(paths: usize, len: usize, dim: usize) -> Self {
        Self {
            paths,
            len,
            dim,
            data: vec![0.0; paths * len * dim],
        }
    }

    pub fn from_vec(paths: usize, len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != paths * len * dim {
            return Err(Error::Shape(format!(
                "{} values for {paths} paths x {len} times x {dim} components",
                data.len()
            )));
        }
        Ok(Self {
            paths,
            len,
            dim,
            data,
        })
    }

    /// Builds an array by evaluating `f(path, step, component)`.
    pub fn from_fn(paths: usize, len: usize, dim: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(paths * len * dim);
        for p in 0..paths {
            for i in 0..len {
                for d in 0..dim {
                    data.push(f(p, i, d));
                }
            }
        }
        Self {
            paths,
            len,
            dim,
            data,
        }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, p: usize, i: usize, d: usize) -> f64 {
        self.data[(p * self.len + i) * self.dim + d]
    }

    /// State vector of path `p` at step `i`.
    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let at = (p * self.len + i) * self.dim;
        &self.data[at..at + self.dim]
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.len * self.dim;
        &self.data[p * n..(p + 1) * n]
    }

    fn path_chunks_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        let n = self.len * self.dim;
        self.data.par_chunks_mut(n)
    }

    /// Applies `f` to every state vector, producing a new array of dimension
    /// `dim`.
    pub fn map(&self, dim: usize, f: impl Fn(usize, &[f64], &mut [f64]) + Sync) -> Self {
        let mut out = Self::zeros(self.paths, self.len, dim);
        let len = self.len;
        let src_dim = self.dim;
        out.data
            .par_chunks_mut(len * dim)
            .zip(self.data.par_chunks(len * src_dim))
            .for_each(|(dst, src)| {
                for i in 0..len {
                    f(i, &src[i * src_dim..(i + 1) * src_dim], &mut dst[i * dim..(i + 1) * dim]);
                }
            });
        out
    }

    /// Component `d` as a scalar array.
    pub fn component(&self, d: usize) -> Self {
        self.map(1, |_, s, out| out[0] = s[d])
    }

    /// Whether two arrays share paths and time points.
    pub fn same_grid(&self, other: &Self) -> bool {
        self.paths == other.paths && self.len == other.len
    }
}

/// Model coefficients on the simulation grid: either one set for all times
/// or one set per step.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSchedule {
    samples: Vec<ItoCoefficients>,
}

impl CoefficientSchedule {
    pub fn constant(c: ItoCoefficients) -> Self {
        Self { samples: vec![c] }
    }

    /// One coefficient set per time step (`samples[i]` acts on `[t_i, t_{i+1})`).
    pub fn sampled(samples: Vec<ItoCoefficients>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidInput("empty coefficient schedule".into()))?;
        let (n, k) = (first.assets(), first.factors());
        if samples.iter().any(|c| c.assets() != n || c.factors() != k) {
            return Err(Error::Shape("coefficient shapes change along the schedule".into()));
        }
        Ok(Self { samples })
    }

    pub fn is_constant(&self) -> bool {
        self.samples.len() == 1
    }

    pub fn at(&self, step: usize) -> &ItoCoefficients {
        &self.samples[step.min(self.samples.len() - 1)]
    }

    pub fn assets(&self) -> usize {
        self.samples[0].assets()
    }

    pub fn factors(&self) -> usize {
        self.samples[0].factors()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Simulated asset states `Ŝ` and driving Brownian states `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub s: PathArray,
    pub w: PathArray,
    pub dt: f64,
    pub seed: u64,
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.s.paths()
    }

    /// Number of time steps (time points minus one).
    pub fn steps(&self) -> usize {
        self.s.len() - 1
    }

    pub fn assets(&self) -> usize {
        self.s.dim()
    }

    pub fn factors(&self) -> usize {
        self.w.dim()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// `log Ŝ` for every path and time.
    pub fn log_prices(&self) -> PathArray {
        let n = self.assets();
        self.s.map(n, |_, s, out| {
            for (o, v) in out.iter_mut().zip(s) {
                *o = v.ln();
            }
        })
    }
}

/// Simulates `m` paths on `[0, horizon]` with step `dt` from `Ŝ_0 = s0`.
pub fn simulate(
    model: &CoefficientSchedule,
    s0: &[f64],
    m: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<PathEnsemble> {
    ensure_positive(dt, "dt")?;
    ensure_positive(horizon, "horizon")?;
    if m == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    let n = model.assets();
    let k = model.factors();
    if s0.len() != n || s0.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial prices must be {n} positive numbers"
        )));
    }
    let steps = (horizon / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Grid(format!(
            "horizon {horizon} is not a whole number of steps of {dt}"
        )));
    }
    if !model.is_constant() && model.len() < steps {
        return Err(Error::Shape(format!(
            "schedule has {} samples for {steps} steps",
            model.len()
        )));
    }
    let len = steps + 1;
    // log-drift and loadings per step, shared by all paths
    let drifts: Vec<DVector<f64>> = (0..if model.is_constant() { 1 } else { steps })
        .map(|i| {
            let c = model.at(i);
            let sst = &c.sigma * c.sigma.transpose();
            &c.alpha - sst.diagonal() * 0.5
        })
        .collect();
    let sqdt = dt.sqrt();

    let mut s = PathArray::zeros(m, len, n);
    let mut w = PathArray::zeros(m, len, k);
    s.path_chunks_mut()
        .zip(w.path_chunks_mut())
        .enumerate()
        .for_each(|(p, (sp, wp))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut logs: Vec<f64> = s0.iter().map(|v| v.ln()).collect();
            let mut dw = vec![0.0; k];
            sp[..n].copy_from_slice(s0);
            for i in 0..steps {
                for z in dw.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *z = sqdt * e;
                }
                let c = model.at(i);
                let mu = &drifts[i.min(drifts.len() - 1)];
                for j in 0..n {
                    let mut inc = mu[j] * dt;
                    for (f, z) in dw.iter().enumerate() {
                        inc += c.sigma[(j, f)] * z;
                    }
                    logs[j] += inc;
                    sp[(i + 1) * n + j] = logs[j].exp();
                }
                for f in 0..k {
                    wp[(i + 1) * k + f] = wp[i * k + f] + dw[f];
                }
            }
        });
    Ok(PathEnsemble { s, w, dt, seed })
}
