//! Ensemble estimators of Nelson's forward, backward and mean stochastic
//! derivatives.
//!
//! For a scalar path functional `Q` and lag `h`,
//!
//! * forward  `DQ_t  ≈ E[(Q_{t+h} − Q_t)/h | X_t]`,
//! * backward `D*Q_t ≈ E[(Q_t − Q_{t−h})/h | X_t]`,
//! * mean     `𝒟Q_t = (DQ_t + D*Q_t)/2`,
//!
//! where the conditioning is on the present state `X_t` only. For Markov
//! functionals the present state carries the same information as the past
//! and future σ-algebras, so the conditional expectations reduce to
//! regressions on `X_t`, estimated here by k-nearest-neighbour averaging
//! across the ensemble. One-dimensional states use a sorted sliding window;
//! states of dimension 2 to 8 use a k-d tree.

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PathArray, PathEnsemble};
use crate::error::{Error, Result};

/// Smallest admissible neighbour count.
pub const MIN_NEIGHBORS: usize = 8;
/// Largest conditioning-state dimension supported by the k-d tree search.
pub const MAX_STATE_DIM: usize = 8;

/// Lag, neighbour count and earliest estimation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Derivative lag `h` (time units, a whole number of steps).
    pub h: f64,
    /// Neighbours per conditional expectation.
    pub k: usize,
    /// Earliest time at which derivatives are estimated.
    pub t_min: f64,
}

impl EstimatorConfig {
    /// Defaults for an ensemble of `m` paths with step `dt`: `h = 5dt`,
    /// `k = max(8, m/200)`, `t_min = 10dt`.
    pub fn defaults(dt: f64, m: usize) -> Self {
        Self {
            h: 5.0 * dt,
            k: MIN_NEIGHBORS.max(m / 200),
            t_min: 10.0 * dt,
        }
    }

    /// Checks the configuration against a step `dt` and returns the lag in
    /// steps.
    pub fn validate(&self, dt: f64) -> Result<usize> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("step must be positive, got {dt}")));
        }
        let tol = 1e-9 * dt;
        if !(self.h >= dt - tol) || !self.h.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lag h = {} must be at least one step {dt}",
                self.h
            )));
        }
        let lag = (self.h / dt).round() as usize;
        if (lag as f64 * dt - self.h).abs() > 1e-7 * self.h {
            return Err(Error::InvalidInput(format!(
                "lag h = {} is not a whole number of steps {dt}",
                self.h
            )));
        }
        if self.k < MIN_NEIGHBORS {
            return Err(Error::InvalidInput(format!(
                "neighbour count {} is below {MIN_NEIGHBORS}",
                self.k
            )));
        }
        if !(self.t_min >= 10.0 * dt - tol) {
            return Err(Error::InvalidInput(format!(
                "t_min = {} is below ten steps ({})",
                self.t_min,
                10.0 * dt
            )));
        }
        if self.h > self.t_min + tol {
            return Err(Error::InvalidInput(format!(
                "lag h = {} exceeds t_min = {}: backward quotients would reach before t = 0",
                self.h, self.t_min
            )));
        }
        Ok(lag)
    }

    /// Every step `i` with `t_min ≤ i·dt` and `i + lag ≤ steps`.
    pub fn estimation_steps(&self, dt: f64, steps: usize) -> Result<Vec<usize>> {
        let lag = self.validate(dt)?;
        let first = (self.t_min / dt - 1e-9).ceil() as usize;
        Ok((first..=steps.saturating_sub(lag)).collect())
    }

    /// Step index of time `t`, checked against the estimation window.
    pub fn step_of(&self, t: f64, dt: f64, steps: usize) -> Result<usize> {
        let lag = self.validate(dt)?;
        let i = (t / dt).round();
        if (i * dt - t).abs() > 1e-7 * dt.max(t.abs()) {
            return Err(Error::Grid(format!("t = {t} is not on the step grid {dt}")));
        }
        let i = i as usize;
        if t < self.t_min - 1e-9 * dt || i + lag > steps {
            return Err(Error::Extrapolation {
                what: "estimation time",
                value: t,
                lo: self.t_min,
                hi: (steps - lag.min(steps)) as f64 * dt,
            });
        }
        Ok(i)
    }
}

/// State on which conditional expectations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningState {
    /// The Brownian state `W_t` (sufficient for deterministic coefficients).
    Brownian,
    /// The log asset prices `log Ŝ_t`.
    LogPrices,
}

impl ConditioningState {
    /// The state array of an ensemble.
    pub fn of(self, ensemble: &PathEnsemble) -> PathArray {
        match self {
            Self::Brownian => ensemble.w.clone(),
            Self::LogPrices => ensemble.log_prices(),
        }
    }
}

/// Derivative estimates at one time step, one entry per path.
#[derive(Debug, Clone, PartialEq)]
pub struct NelsonSeries {
    pub step: usize,
    pub t: f64,
    /// k-NN estimates of `DQ_t` given each path's present state.
    pub forward: Vec<f64>,
    /// k-NN estimates of `D*Q_t`.
    pub backward: Vec<f64>,
    /// `(forward + backward)/2`.
    pub mean: Vec<f64>,
    /// Unsmoothed forward quotients `(Q_{t+h} − Q_t)/h`.
    pub raw_forward: Vec<f64>,
    /// Unsmoothed backward quotients `(Q_t − Q_{t−h})/h`.
    pub raw_backward: Vec<f64>,
}

impl NelsonSeries {
    /// Unsmoothed mean quotients `(Q_{t+h} − Q_{t−h})/(2h)`.
    pub fn raw_mean(&self) -> Vec<f64> {
        self.raw_forward
            .iter()
            .zip(&self.raw_backward)
            .map(|(f, b)| 0.5 * (f + b))
            .collect()
    }
}

/// Raw forward and backward quotients of `q` at `step`.
pub(crate) fn raw_quotients(
    q: &PathArray,
    step: usize,
    lag: usize,
    dt: f64,
) -> (Vec<f64>, Vec<f64>) {
    let h = lag as f64 * dt;
    (0..q.paths())
        .map(|p| {
            let now = q.get(p, step, 0);
            (
                (q.get(p, step + lag, 0) - now) / h,
                (now - q.get(p, step - lag, 0)) / h,
            )
        })
        .unzip()
}

/// Estimates `D`, `D*` and `𝒟` of the scalar functional `q` at each of
/// `steps`, conditioning on `state`.
pub fn nelson_derivatives(
    q: &PathArray,
    state: &PathArray,
    dt: f64,
    steps: &[usize],
    cfg: &EstimatorConfig,
) -> Result<Vec<NelsonSeries>> {
    let lag = cfg.validate(dt)?;
    if q.dim() != 1 {
        return Err(Error::Shape(format!(
            "functional must be scalar, has {} components",
            q.dim()
        )));
    }
    if !q.same_grid(state) {
        return Err(Error::GridIncompatible(
            "functional and conditioning state are sampled on different grids".into(),
        ));
    }
    if state.dim() == 0 || state.dim() > MAX_STATE_DIM {
        return Err(Error::InvalidInput(format!(
            "conditioning state dimension {} outside 1..={MAX_STATE_DIM}",
            state.dim()
        )));
    }
    if q.paths() < cfg.k {
        return Err(Error::InsufficientNeighbors {
            needed: cfg.k,
            available: q.paths(),
        });
    }
    let last = q.len() - 1;
    for &i in steps {
        let t = i as f64 * dt;
        if t < cfg.t_min - 1e-9 * dt || i < lag || i + lag > last {
            return Err(Error::Extrapolation {
                what: "estimation time",
                value: t,
                lo: cfg.t_min,
                hi: (last.saturating_sub(lag)) as f64 * dt,
            });
        }
    }
    steps
        .par_iter()
        .map(|&i| {
            let (raw_forward, raw_backward) = raw_quotients(q, i, lag, dt);
            let points: Vec<&[f64]> = (0..state.paths()).map(|p| state.state(p, i)).collect();
            let smoothed = knn_means(&points, &[&raw_forward, &raw_backward], cfg.k)?;
            let (forward, backward) = (smoothed[0].clone(), smoothed[1].clone());
            let mean = forward
                .iter()
                .zip(&backward)
                .map(|(f, b)| 0.5 * (f + b))
                .collect();
            Ok(NelsonSeries {
                step: i,
                t: i as f64 * dt,
                forward,
                backward,
                mean,
                raw_forward,
                raw_backward,
            })
        })
        .collect()
}

/// For each point, the average of every value series over its `k` nearest
/// neighbours (the point itself included).
pub fn knn_means(points: &[&[f64]], values: &[&[f64]], k: usize) -> Result<Vec<Vec<f64>>> {
    let m = points.len();
    if m < k || k == 0 {
        return Err(Error::InsufficientNeighbors {
            needed: k.max(1),
            available: m,
        });
    }
    if values.iter().any(|v| v.len() != m) {
        return Err(Error::Shape("value series and points differ in length".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points of mixed dimension".into()));
    }
    macro_rules! tree {
        ($d:literal) => {
            knn_means_tree::<$d>(points, values, k)
        };
    }
    match dim {
        1 => Ok(knn_means_sorted(points, values, k)),
        2 => tree!(2),
        3 => tree!(3),
        4 => tree!(4),
        5 => tree!(5),
        6 => tree!(6),
        7 => tree!(7),
        8 => tree!(8),
        d => Err(Error::InvalidInput(format!(
            "conditioning state dimension {d} outside 1..={MAX_STATE_DIM}"
        ))),
    }
}

/// One-dimensional k-NN: the neighbours of a point are a contiguous window
/// of the sorted sample, and window starts move monotonically.
fn knn_means_sorted(points: &[&[f64]], values: &[&[f64]], k: usize) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
    let x: Vec<f64> = order.iter().map(|&i| points[i][0]).collect();
    let prefix: Vec<Vec<f64>> = values
        .iter()
        .map(|v| {
            let mut acc = Vec::with_capacity(m + 1);
            acc.push(0.0);
            let mut s = 0.0;
            for &i in &order {
                s += v[i];
                acc.push(s);
            }
            acc
        })
        .collect();
    let mut out = vec![vec![0.0; m]; values.len()];
    let mut lo = 0usize;
    for (pos, &orig) in order.iter().enumerate() {
        let xi = x[pos];
        lo = lo.max((pos + 1).saturating_sub(k));
        while lo + k < m && lo < pos && x[lo + k] - xi < xi - x[lo] {
            lo += 1;
        }
        for (o, p) in out.iter_mut().zip(&prefix) {
            o[orig] = (p[lo + k] - p[lo]) / k as f64;
        }
    }
    out
}

fn knn_means_tree<const D: usize>(
    points: &[&[f64]],
    values: &[&[f64]],
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    let entries: Vec<[f64; D]> = points
        .iter()
        .map(|p| {
            let mut a = [0.0; D];
            a.copy_from_slice(p);
            a
        })
        .collect();
    let tree = ImmutableKdTree::<f64, D>::new_from_slice(&entries)
        .map_err(|e| Error::InvalidInput(format!("cannot index conditioning states: {e:?}")))?;
    let kk = NonZero::new(k).expect("k checked positive");
    let per_point: Vec<Vec<f64>> = entries
        .par_iter()
        .map(|e| {
            let hits = tree.query(e).nearest_n::<SquaredEuclidean<f64>>(kk).execute();
            let mut sums = vec![0.0; values.len()];
            for hit in &hits {
                let idx = hit.item as usize;
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v[idx];
                }
            }
            let n = hits.len() as f64;
            sums.iter().map(|s| s / n).collect()
        })
        .collect();
    Ok((0..values.len())
        .map(|j| per_point.iter().map(|row| row[j]).collect())
        .collect())
}

/// One state bin of a binned comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Bin average of the k-NN estimates.
    pub estimate: f64,
    /// Standard error of the bin average, from the raw quotients.
    pub se: f64,
    /// Bin average of the reference values.
    pub oracle: f64,
    /// `(estimate − oracle)/se`.
    pub z: f64,
}

/// Groups paths into `bins` equal-count bins of the scalar `state` and
/// compares bin averages of `estimate` with those of `oracle`. The standard
/// error is the sample deviation of `raw` within the bin over `√count`.
pub fn bin_compare(
    state: &[f64],
    estimate: &[f64],
    raw: &[f64],
    oracle: &[f64],
    bins: usize,
) -> Result<Vec<Bin>> {
    let m = state.len();
    if estimate.len() != m || raw.len() != m || oracle.len() != m {
        return Err(Error::Shape("binned series differ in length".into()));
    }
    if bins == 0 || m < 2 * bins {
        return Err(Error::InsufficientNeighbors {
            needed: 2 * bins.max(1),
            available: m,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| state[a].total_cmp(&state[b]));
    Ok((0..bins)
        .map(|b| {
            let idx = &order[b * m / bins..(b + 1) * m / bins];
            let n = idx.len() as f64;
            let avg = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / n;
            let est = avg(estimate);
            let orc = avg(oracle);
            let raw_mean = avg(raw);
            let var = idx.iter().map(|&i| (raw[i] - raw_mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let z = if se > 0.0 {
                (est - orc) / se
            } else if est == orc {
                0.0
            } else {
                f64::INFINITY.copysign(est - orc)
            };
            Bin {
                lo: state[idx[0]],
                hi: state[idx[idx.len() - 1]],
                count: idx.len(),
                estimate: est,
                se,
                oracle: orc,
                z,
            }
        })
        .collect())
}

/// Sample mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ItoCoefficients;
    use crate::simulate::{simulate, CoefficientSchedule};
    use proptest::prelude::*;

    fn brownian(m: usize, dt: f64, horizon: f64, seed: u64) -> PathEnsemble {
        let model = CoefficientSchedule::constant(
            ItoCoefficients::from_rows(&[0.0], &[vec![1.0]], &[0.0], 0.0).unwrap(),
        );
        simulate(&model, &[1.0], m, dt, horizon, seed).unwrap()
    }

    #[test]
    fn config_validation() {
        let dt = 0.01;
        let cfg = EstimatorConfig::defaults(dt, 10_000);
        assert_eq!(cfg.k, 50);
        assert_eq!(cfg.validate(dt).unwrap(), 5);
        let bad = [
            EstimatorConfig { h: 0.005, ..cfg },
            EstimatorConfig { h: 0.025, ..cfg },
            EstimatorConfig { k: 7, ..cfg },
            EstimatorConfig { t_min: 0.05, ..cfg },
            EstimatorConfig { h: 0.2, ..cfg },
        ];
        for b in bad {
            assert!(b.validate(dt).is_err(), "{b:?}");
        }
        let steps = cfg.estimation_steps(dt, 100).unwrap();
        assert_eq!(steps.first(), Some(&10));
        assert_eq!(steps.last(), Some(&95));
    }

    #[test]
    fn deterministic_functional_gives_its_derivative() {
        let e = brownian(64, 0.01, 1.0, 1);
        let g = |t: f64| (2.0 * t).sin() + t * t;
        let dg = |t: f64| 2.0 * (2.0 * t).cos() + 2.0 * t;
        let q = PathArray::from_fn(64, e.s.len(), 1, |_, i, _| g(i as f64 * 0.01));
        let cfg = EstimatorConfig::defaults(0.01, 64);
        let steps = cfg.estimation_steps(0.01, e.steps()).unwrap();
        for s in nelson_derivatives(&q, &e.w, 0.01, &steps, &cfg).unwrap() {
            let exact = dg(s.t);
            for v in s.forward.iter().chain(&s.backward).chain(&s.mean) {
                assert!((v - exact).abs() < 4.0 * cfg.h, "{v} vs {exact}");
            }
            // the centred mean is second order
            assert!((s.mean[0] - exact).abs() < 4.0 * cfg.h * cfg.h);
        }
    }

    #[test]
    fn too_few_paths_is_reported_with_counts() {
        let e = brownian(5, 0.01, 0.3, 1);
        let cfg = EstimatorConfig::defaults(0.01, 5);
        let err = nelson_derivatives(&e.w, &e.w, 0.01, &[10], &cfg).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientNeighbors {
                needed: 8,
                available: 5
            }
        ));
    }

    #[test]
    fn steps_outside_the_window_are_rejected() {
        let e = brownian(20, 0.01, 0.3, 1);
        let cfg = EstimatorConfig::defaults(0.01, 20);
        assert!(nelson_derivatives(&e.w, &e.w, 0.01, &[5], &cfg).is_err());
        assert!(nelson_derivatives(&e.w, &e.w, 0.01, &[28], &cfg).is_err());
        assert!(nelson_derivatives(&e.w, &e.w, 0.01, &[25], &cfg).is_ok());
    }

    #[test]
    fn brownian_mean_derivative_is_w_over_2t() {
        let dt = 0.01;
        let e = brownian(20_000, dt, 1.0, 11);
        let cfg = EstimatorConfig::defaults(dt, e.paths());
        let steps = [30usize, 70];
        for s in nelson_derivatives(&e.w, &e.w, dt, &steps, &cfg).unwrap() {
            let w: Vec<f64> = (0..e.paths()).map(|p| e.w.get(p, s.step, 0)).collect();
            let oracle: Vec<f64> = w.iter().map(|w| w / (2.0 * s.t)).collect();
            for b in bin_compare(&w, &s.mean, &s.raw_mean(), &oracle, 10).unwrap() {
                assert!(b.z.abs() < 5.0, "{b:?}");
            }
            let zero = vec![0.0; w.len()];
            for b in bin_compare(&w, &s.forward, &s.raw_forward, &zero, 10).unwrap() {
                assert!(b.z.abs() < 5.0, "forward {b:?}");
            }
        }
    }

    fn brute_force(points: &[Vec<f64>], values: &[f64], k: usize) -> Vec<f64> {
        points
            .iter()
            .map(|p| {
                let mut d: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .map(|(j, q)| (p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), j))
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0));
                d[..k].iter().map(|(_, j)| values[*j]).sum::<f64>() / k as f64
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn knn_matches_brute_force(
            dim in 1usize..4,
            raw in prop::collection::vec(-10.0f64..10.0, 40..120),
            k in 1usize..12,
        ) {
            let m = raw.len() / dim;
            prop_assume!(m >= k);
            let points: Vec<Vec<f64>> = (0..m).map(|i| raw[i * dim..(i + 1) * dim].to_vec()).collect();
            let values: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
            let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
            let got = knn_means(&refs, &[&values], k).unwrap();
            // continuous random draws make the neighbour sets unambiguous
            let want = brute_force(&points, &values, k);
            for (g, w) in got[0].iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-12);
            }
        }

        #[test]
        fn knn_of_a_constant_is_the_constant(
            xs in prop::collection::vec(-5.0f64..5.0, 10..60),
            c in -3.0f64..3.0,
        ) {
            let refs: Vec<&[f64]> = xs.chunks(1).collect();
            let values = vec![c; xs.len()];
            let out = knn_means(&refs, &[&values], 8).unwrap();
            prop_assert!(out[0].iter().all(|v| (v - c).abs() < 1e-12));
        }
    }
}
