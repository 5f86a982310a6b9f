//! Statistical properties of the simulator and the path estimators.

use gat_core::gauges::PortfolioNominals;
use gat_core::geometry::ItoCoefficients;
use gat_core::simulate::{
    bin_compare, empirical_rho, instantaneous_return, nelson_derivatives, read_ensemble,
    self_financing_residual, simulate, write_ensemble, CoefficientSchedule, ConditioningState,
    EstimatorConfig, PathArray, PathEnsemble,
};

fn model(alpha: &[f64], sigma: &[Vec<f64>], r: &[f64]) -> CoefficientSchedule {
    CoefficientSchedule::constant(ItoCoefficients::from_rows(alpha, sigma, r, 0.0).unwrap())
}

fn planted_model() -> CoefficientSchedule {
    let j = [1.0 / 5f64.sqrt(), -2.0 / 5f64.sqrt()];
    model(
        &[0.05 + 0.02 * j[0], 0.025 + 0.02 * j[1]],
        &[vec![0.2], vec![0.1]],
        &[0.0, 0.0],
    )
}

#[test]
fn geometric_brownian_mean_derivative_matches_closed_form() {
    let (alpha, sigma, dt) = (0.08, 0.3, 0.01);
    let e = simulate(&model(&[alpha], &[vec![sigma]], &[0.0]), &[1.0], 20_000, dt, 1.0, 5).unwrap();
    let log_s = e.log_prices();
    let cfg = EstimatorConfig::defaults(dt, e.paths());
    let drift = alpha - 0.5 * sigma * sigma;
    for s in nelson_derivatives(&log_s, &log_s, dt, &[25, 50, 75], &cfg).unwrap() {
        let state: Vec<f64> = (0..e.paths()).map(|p| log_s.get(p, s.step, 0)).collect();
        // 𝒟 log Ŝ = α − σ²/2 + σ W_t/(2t), with σW_t recovered from log Ŝ
        let oracle: Vec<f64> = state
            .iter()
            .map(|l| drift + (l - drift * s.t) / (2.0 * s.t))
            .collect();
        for b in bin_compare(&state, &s.mean, &s.raw_mean(), &oracle, 10).unwrap() {
            assert!(b.z.abs() < 5.0, "t = {}: {b:?}", s.t);
        }
    }
}

#[test]
fn returns_agree_across_portfolios_when_the_curvature_vanishes() {
    // identical loadings and identical α + r: the spread is zero for every W
    let sigma = vec![0.2, 0.1];
    let m = model(&[0.05, 0.03], &[sigma.clone(), sigma.clone()], &[0.0, 0.02]);
    let dt = 0.01;
    let e = simulate(&m, &[1.0, 2.0], 4000, dt, 1.0, 9).unwrap();
    let cfg = EstimatorConfig::defaults(dt, e.paths());
    let rates = vec![vec![0.0], vec![0.02]];
    let steps = [30, 60];
    let returns: Vec<_> = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![3.0, 0.5]]
        .into_iter()
        .map(|x| {
            let x = PortfolioNominals::new(x).unwrap();
            instantaneous_return(&e, &x, &rates, &steps, &cfg, ConditioningState::Brownian).unwrap()
        })
        .collect();
    let half_var = 0.5 * (0.2f64.powi(2) + 0.1f64.powi(2));
    for k in 0..steps.len() {
        let base = &returns[0][k];
        assert!((base.mean - (0.05 - half_var)).abs() < 3.0 * base.se, "{base:?}");
        for other in &returns[1..] {
            for (a, b) in base.raw.iter().zip(&other[k].raw) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }
}

/// Constant-weight rebalancing between two assets, funded only by trading.
fn rebalanced_strategy(e: &PathEnsemble, weight: f64) -> PathArray {
    let len = e.s.len();
    let mut data = Vec::with_capacity(e.paths() * len * 2);
    for p in 0..e.paths() {
        let mut value = 1.0;
        let mut hold = [0.0; 2];
        for i in 0..len {
            let d = e.s.state(p, i);
            if i > 0 {
                value = hold[0] * d[0] + hold[1] * d[1];
            }
            hold = [weight * value / d[0], (1.0 - weight) * value / d[1]];
            data.extend_from_slice(&hold);
        }
    }
    PathArray::from_vec(e.paths(), len, 2, data).unwrap()
}

#[test]
fn rebalanced_portfolio_is_self_financing() {
    let m = model(&[0.06, 0.02], &[vec![0.25, 0.0], vec![0.1, 0.15]], &[0.0, 0.0]);
    let dt = 0.01;
    let e = simulate(&m, &[1.0, 1.0], 8000, dt, 1.0, 21).unwrap();
    let x = rebalanced_strategy(&e, 0.6);
    let cfg = EstimatorConfig::defaults(dt, e.paths());
    for p in self_financing_residual(&x, &e.s, &e, &[20, 50, 80], &cfg).unwrap() {
        assert!(p.residual.abs() < 3.0 * p.se, "{p:?}");
        // the rebalancing has non-zero quadratic covariation with the prices
        assert!(p.covariation.abs() > 3.0 * p.covariation_se, "{p:?}");
    }
}

#[test]
fn standard_error_shrinks_by_root_two_when_paths_double() {
    let m = planted_model();
    let dt = 0.01;
    let se = |paths: usize| {
        let e = simulate(&m, &[1.0, 1.0], paths, dt, 1.0, 33).unwrap();
        let cfg = EstimatorConfig::defaults(dt, paths);
        empirical_rho(&e, &m, &[(0.2, 0.8)], &cfg).unwrap()[0].drift_se.clone()
    };
    let (coarse, fine) = (se(10_000), se(20_000));
    let root_two = 2f64.sqrt();
    for (a, b) in coarse.iter().zip(&fine) {
        let ratio = a / b;
        assert!((0.8 * root_two..1.2 * root_two).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn empirical_rho_separates_zero_curvature_from_planted_models() {
    let dt = 0.01;
    let zc = model(&[0.05, 0.025], &[vec![0.2], vec![0.1]], &[0.0, 0.0]);
    for (m, target) in [(zc, 0.0), (planted_model(), 0.02)] {
        let e = simulate(&m, &[1.0, 1.0], 4000, dt, 1.0, 3).unwrap();
        let cfg = EstimatorConfig::defaults(dt, e.paths());
        let p = empirical_rho(&e, &m, &[(0.2, 0.8)], &cfg).unwrap().remove(0);
        let planted = gat_core::geometry::rho(m.at(0));
        assert!((planted.norm() - target).abs() < 1e-12);
        assert!(p.consistent_with(planted.as_slice(), 3.0), "{p:?}");
        assert_eq!(p.consistent_with(&[0.0], 3.0), target == 0.0, "{p:?}");
    }
}

#[test]
fn simulation_and_file_round_trip_are_reproducible() {
    let m = planted_model();
    let a = simulate(&m, &[1.0, 2.0], 64, 0.02, 0.5, 77).unwrap();
    let b = simulate(&m, &[1.0, 2.0], 64, 0.02, 0.5, 77).unwrap();
    assert_eq!(a, b);
    let c = simulate(&m, &[1.0, 2.0], 64, 0.02, 0.5, 78).unwrap();
    assert_ne!(a.s, c.s);

    let mut first = Vec::new();
    write_ensemble(&mut first, &a).unwrap();
    let back = read_ensemble(first.as_slice()).unwrap();
    assert_eq!(back, a);
    let mut second = Vec::new();
    write_ensemble(&mut second, &back).unwrap();
    assert_eq!(first, second);
}
