//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Run with `cargo test --release --test acceptance`. The process exits with
//! status 1 when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gat_core::classical::bs_call;
use gat_core::cli::{self, Command, Status};
use gat_core::config::RunConfig;
use gat_core::fdsolver::{self, PdeGrid, DEFAULT_HALF_WIDTH};
use gat_core::gauges::{convolve, gauge_transform, CashflowIntensity, Gauge, TimeGrid};
use gat_core::geometry::{self, ItoCoefficients};
use gat_core::pricing::{
    CallSpec, NonlinearConstant, PerturbationOptions, PerturbationSolution, SourceSign,
    TransformGrid,
};
use gat_core::simulate::{
    bin_compare, empirical_rho, nelson_derivatives, simulate, CoefficientSchedule,
    EstimatorConfig, PathEnsemble,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// classical limit
const C1_PERTURBATION_RTOL: f64 = 5e-4;
const C1_FD_RTOL: f64 = 1e-3;
const C1_FD_N: usize = 256;
const C1_BUDGET: Duration = Duration::from_secs(30);
// order study
const C2_RATIO: (f64, f64) = (5.5, 10.5);
const C2_BUDGET: Duration = Duration::from_secs(300);
// projection identity
const C4_MODELS: usize = 1000;
const C4_TOL: f64 = 1e-9;
const C4_BUDGET: Duration = Duration::from_secs(5);
// rho consistency
const C5_MODELS: usize = 1000;
const C5_TOL: f64 = 1e-10;
const C5_FAMILY: usize = 100;
const C5_W_SAMPLES: usize = 100;
const C5_ZERO_TOL: f64 = 1e-9;
const C5_BUDGET: Duration = Duration::from_secs(10);
// Nelson derivatives of Brownian motion
const C6_PATHS: usize = 50_000;
const C6_DT: f64 = 1e-3;
const C6_BINS: usize = 10;
const C6_Z: f64 = 5.0;
const C6_BUDGET: Duration = Duration::from_secs(60);
// empirical rho
const C7_PATHS: usize = 100_000;
const C7_DT: f64 = 0.01;
const C7_RHO: f64 = 0.02;
const C7_Z: f64 = 3.0;
const C7_BUDGET: Duration = Duration::from_secs(120);
// gauge composition
const C8_DH: [f64; 3] = [0.02, 0.01, 0.005];
const C8_ORDER: (f64, f64) = (1.6, 2.5);
/// Bound on `gap / Δh`.
const C8_CONSTANT: f64 = 5.0;
const C8_BUDGET: Duration = Duration::from_secs(10);
// undiscounted consistency
const C9_N: [usize; 2] = [256, 512];
const C9_ATOL: f64 = 1e-4;
const C9_RATIO: (f64, f64) = (3.0, 5.0);
const C9_BUDGET: Duration = Duration::from_secs(60);

const SEED: u64 = 20240601;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Criterion = fn() -> Result<Verdict, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Criterion); 9] = [
        ("1 classical limit", C1_BUDGET, classical_limit),
        ("2 perturbation order", C2_BUDGET, perturbation_order),
        ("3 constant adjudication", C2_BUDGET, constant_adjudication),
        ("4 projection of diag(σσ†)", C4_BUDGET, projection_identity),
        ("5 rho consistency", C5_BUDGET, rho_consistency),
        ("6 Nelson derivative of W", C6_BUDGET, nelson_brownian),
        ("7 empirical rho recovery", C7_BUDGET, empirical_rho_recovery),
        ("8 gauge composition", C8_BUDGET, gauge_composition),
        ("9 undiscounted consistency", C9_BUDGET, undiscounted_consistency),
    ];
    let mut failures = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= budget;
        let ok = pass && in_time;
        if !ok {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.1} s, budget {} s{}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("{} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn classical_limit() -> Result<Verdict, String> {
    let (k, sigma) = (100.0, 0.2);
    let moneyness = linspace(0.8, 1.2, 5);
    let maturities = linspace(0.25, 2.0, 5);
    let longest = CallSpec::new(k, 2.0, sigma, 0.0, 0.0).map_err(err)?;
    let grid = TransformGrid::default_for(&longest).map_err(err)?;
    let base = PerturbationSolution::build(&longest, &grid, PerturbationOptions::default())
        .map_err(err)?;
    let (mut worst_pert, mut worst_fd) = (0.0f64, 0.0f64);
    for &t in &maturities {
        let spec = CallSpec::new(k, t, sigma, 0.0, 0.0).map_err(err)?;
        let pert = base.with_spec(&spec).map_err(err)?;
        let fd_grid = PdeGrid::centred(&spec, C1_FD_N, C1_FD_N, DEFAULT_HALF_WIDTH).map_err(err)?;
        let fd = fdsolver::solve(&spec, &fd_grid).map_err(err)?;
        for &m in &moneyness {
            let x = m * k;
            let exact = bs_call(x, k, t, sigma, 0.0);
            let p = pert.price_discounted(x, 0.0).map_err(err)?;
            let f = fd.value_at(x, 0.0).map_err(err)?;
            worst_pert = worst_pert.max((p - exact).abs() / exact);
            worst_fd = worst_fd.max((f - exact).abs() / exact);
        }
    }
    Ok(verdict(
        worst_pert < C1_PERTURBATION_RTOL && worst_fd < C1_FD_RTOL,
        format!(
            "max rel err perturbation {worst_pert:.2e} (tol {C1_PERTURBATION_RTOL:.0e}), FD {C1_FD_N}x{C1_FD_N} {worst_fd:.2e} (tol {C1_FD_RTOL:.0e})"
        ),
    ))
}

/// The compare command's adjudication, run once and shared by criteria 2 and 3.
fn compare_run() -> Result<serde_json::Value, String> {
    use std::sync::OnceLock;
    static RESULT: OnceLock<Result<serde_json::Value, String>> = OnceLock::new();
    RESULT
        .get_or_init(|| {
            let cfg = RunConfig::from_toml(
                r#"
                schema_version = 1
                [call]
                k = 100.0
                maturity = 1.0
                sigma = 0.2
                rho = 0.02
                [compare]
                rhos = [0.04, 0.02, 0.01]
                probes = [1.0]
                reference_n = 512
                "#,
            )
            .map_err(err)?;
            let dir = tempfile::tempdir().map_err(err)?;
            let outcome = cli::run_config(Command::Compare, &cfg, dir.path()).map_err(err)?;
            let text = std::fs::read_to_string(dir.path().join("metadata.json")).map_err(err)?;
            let mut meta: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
            meta["__pass"] = (outcome.status == Status::Pass).into();
            Ok(meta)
        })
        .clone()
}

fn ratios_of(row: &serde_json::Value) -> Vec<f64> {
    row["ratios"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
        .unwrap_or_default()
}

fn perturbation_order() -> Result<Verdict, String> {
    let meta = compare_run()?;
    let adj = &meta["results"]["adjudication"];
    let chosen = &adj["chosen"];
    let row = adj["rows"]
        .as_array()
        .and_then(|rows| {
            rows.iter()
                .find(|r| r["constant"] == chosen["constant"] && r["sign"] == chosen["sign"])
        })
        .ok_or("no third-order candidate")?;
    let ratios = ratios_of(row);
    let pass = !ratios.is_empty() && ratios.iter().all(|r| (C2_RATIO.0..=C2_RATIO.1).contains(r));
    Ok(verdict(
        pass,
        format!(
            "ATM error ratios under rho-halving {ratios:.3?} (accepted {C2_RATIO:?}), finite-difference reference n = 512"
        ),
    ))
}

fn constant_adjudication() -> Result<Verdict, String> {
    let meta = compare_run()?;
    let adj = &meta["results"]["adjudication"];
    let passing = adj["passing"].as_u64().unwrap_or(0);
    let chosen = &adj["chosen"];
    let expected = serde_json::json!({
        "constant": NonlinearConstant::Dimensionless.label(),
        "sign": SourceSign::Derived.label(),
    });
    let table: Vec<String> = adj["rows"]
        .as_array()
        .map(|rows| {
            rows.iter()
                .map(|r| {
                    format!(
                        "{}/{} {:.2?}",
                        r["constant"].as_str().unwrap_or("?"),
                        r["sign"].as_str().unwrap_or("?"),
                        ratios_of(r)
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    let in_metadata = chosen.is_object() && adj["rows"].as_array().is_some_and(|r| r.len() == 4);
    Ok(verdict(
        passing == 1 && *chosen == expected && in_metadata && meta["__pass"] == true,
        format!("{passing} third-order candidate, chosen {chosen} (recorded in metadata.json); {}", table.join("; ")),
    ))
}

fn random_sigma(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rng.gen_range(1..=8);
    let k = rng.gen_range(1..=n);
    DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn projection_identity() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst, mut failures, mut full_rank_square) = (0.0f64, 0usize, 0usize);
    for _ in 0..C4_MODELS {
        let sigma = random_sigma(&mut rng);
        let diag = geometry::diag_of(&(&sigma * sigma.transpose())).map_err(err)?;
        let residual = (geometry::range_projections(&sigma).perp * diag).norm();
        worst = worst.max(residual);
        if residual >= C4_TOL {
            failures += 1;
        } else if sigma.nrows() == sigma.ncols() {
            full_rank_square += 1;
        }
    }
    Ok(verdict(
        failures == 0,
        format!(
            "{failures} of {C4_MODELS} random sigma exceed {C4_TOL:.0e}, max |P_perp diag(σσ†)| = {worst:.3e}; \
             the {full_rank_square} passing cases all have K = N (trivial kernel)"
        ),
    ))
}

fn coefficients(alpha: DVector<f64>, sigma: DMatrix<f64>, r: DVector<f64>) -> Result<ItoCoefficients, String> {
    ItoCoefficients::new(alpha, sigma, r, 0.0).map_err(err)
}

/// Largest curvature spread over `C5_W_SAMPLES` draws of `W_t` at `t = 0.5`.
fn max_spread(c: &ItoCoefficients, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let t: f64 = 0.5;
    let mut worst = 0.0f64;
    for _ in 0..C5_W_SAMPLES {
        let w = random_vector(rng, c.factors(), t.sqrt());
        worst = worst.max(geometry::curvature_spread(c, &w, t).map_err(err)?.amax());
    }
    Ok(worst)
}

fn rho_consistency() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst_gap = 0.0f64;
    for _ in 0..C5_MODELS {
        let sigma = random_sigma(&mut rng);
        let n = sigma.nrows();
        let c = coefficients(random_vector(&mut rng, n, 0.1), sigma, random_vector(&mut rng, n, 0.05))?;
        worst_gap = worst_gap.max((geometry::rho(&c).norm() - geometry::zc_residual(&c)).abs());
    }
    let norm_ok = worst_gap < C5_TOL;

    // (ZC) family: α + r = σλ with a non-trivial kernel; non-(ZC): add a
    // kernel direction to the drift
    let (mut zc_flat, mut non_zc_curved) = (0usize, 0usize);
    let mut zc_worst = 0.0f64;
    for _ in 0..C5_FAMILY {
        let n = rng.gen_range(2..=8);
        let k = rng.gen_range(1..n);
        let sigma = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lambda = random_vector(&mut rng, k, 0.3);
        let r = random_vector(&mut rng, n, 0.05);
        let alpha = &sigma * lambda - &r;
        let zc = coefficients(alpha.clone(), sigma.clone(), r.clone())?;
        let spread = max_spread(&zc, &mut rng)?;
        zc_worst = zc_worst.max(spread);
        if geometry::zc_residual(&zc) < C5_ZERO_TOL && spread < C5_ZERO_TOL {
            zc_flat += 1;
        }
        let kernel = geometry::kernel_basis(&sigma);
        let bump = kernel.j.column(0) * 0.05;
        let non_zc = coefficients(alpha + bump, sigma, r)?;
        if geometry::zc_residual(&non_zc) > C5_ZERO_TOL && max_spread(&non_zc, &mut rng)? > C5_ZERO_TOL {
            non_zc_curved += 1;
        }
    }
    let iff_ok = zc_flat == C5_FAMILY && non_zc_curved == C5_FAMILY;
    Ok(verdict(
        norm_ok && iff_ok,
        format!(
            "max | |rho| - zc_residual | = {worst_gap:.2e} over {C5_MODELS} models (tol {C5_TOL:.0e}, {}); \
             spread ≡ 0 on {zc_flat}/{C5_FAMILY} (ZC) models (max spread {zc_worst:.2e}), \
             spread ≢ 0 on {non_zc_curved}/{C5_FAMILY} non-(ZC) models",
            if norm_ok { "ok" } else { "violated" }
        ),
    ))
}

fn brownian_ensemble(paths: usize, dt: f64) -> Result<PathEnsemble, String> {
    let c = ItoCoefficients::from_rows(&[0.0], &[vec![1.0]], &[0.0], 0.0).map_err(err)?;
    simulate(&CoefficientSchedule::constant(c), &[1.0], paths, dt, 1.0, SEED).map_err(err)
}

fn nelson_brownian() -> Result<Verdict, String> {
    let e = brownian_ensemble(C6_PATHS, C6_DT)?;
    let cfg = EstimatorConfig::defaults(C6_DT, e.paths());
    let steps: Vec<usize> = [0.1, 0.5, 0.9]
        .iter()
        .map(|&t| cfg.step_of(t, C6_DT, e.steps()))
        .collect::<gat_core::Result<_>>()
        .map_err(err)?;
    let mut worst = 0.0f64;
    let mut per_time = Vec::new();
    for s in nelson_derivatives(&e.w, &e.w, C6_DT, &steps, &cfg).map_err(err)? {
        let w: Vec<f64> = (0..e.paths()).map(|p| e.w.get(p, s.step, 0)).collect();
        let oracle: Vec<f64> = w.iter().map(|w| w / (2.0 * s.t)).collect();
        let bins = bin_compare(&w, &s.mean, &s.raw_mean(), &oracle, C6_BINS).map_err(err)?;
        let z = bins.iter().map(|b| b.z.abs()).fold(0.0, f64::max);
        per_time.push(format!("t={:.1}: max|z|={z:.2}", s.t));
        worst = worst.max(z);
    }
    Ok(verdict(
        worst < C6_Z,
        format!(
            "binned 𝒟W vs W/(2t), {C6_PATHS} paths, dt {C6_DT:.0e}, {C6_BINS} bins, k = {}: {} (tol {C6_Z} SE)",
            cfg.k,
            per_time.join(", ")
        ),
    ))
}

fn empirical_rho_recovery() -> Result<Verdict, String> {
    // σ̄ = [0.2, 0.1]† spans the range; the kernel is ∝ [1, −2]/√5 and
    // α + r = σ̄λ + ρ·J with λ = 0.25.
    let sigma = [vec![0.2], vec![0.1]];
    let j = [1.0 / 5f64.sqrt(), -2.0 / 5f64.sqrt()];
    let lambda = 0.25;
    let alpha = [sigma[0][0] * lambda + C7_RHO * j[0], sigma[1][0] * lambda + C7_RHO * j[1]];
    let c = ItoCoefficients::from_rows(&alpha, &sigma, &[0.0, 0.0], 0.0).map_err(err)?;
    let planted = geometry::rho(&c);
    let model = CoefficientSchedule::constant(c);
    let e = simulate(&model, &[1.0, 1.0], C7_PATHS, C7_DT, 1.0, SEED).map_err(err)?;
    let cfg = EstimatorConfig::defaults(C7_DT, e.paths());
    let point = empirical_rho(&e, &model, &[(0.2, 0.8)], &cfg).map_err(err)?.remove(0);
    let ok = point.consistent_with(planted.as_slice(), C7_Z);
    Ok(verdict(
        ok,
        format!(
            "rho_hat = {:.6} ± {:.1e} (planted {:.6}, {C7_PATHS} paths, t in [0.2, 0.8], tol {C7_Z} SE)",
            point.rho.first().copied().unwrap_or(f64::NAN),
            point.rho_se.first().copied().unwrap_or(f64::NAN),
            planted[0]
        ),
    ))
}

/// Smooth synthetic gauge with forward curve `f(t, s) = a + b s + c sin(t + s)`.
fn smooth_gauge(ds: f64) -> Result<Gauge, String> {
    let (a, b, c) = (0.02, 0.005, 0.01);
    let yield_integral = move |t: f64, s: f64| a * (s - t) + 0.5 * b * (s * s - t * t) - c * ((t + s).cos() - (2.0 * t).cos());
    let offsets = (3.0 / ds).round() as usize + 1;
    let times = TimeGrid::new(0.0, 0.25, 9).map_err(err)?;
    Gauge::from_fn(
        times,
        ds,
        offsets,
        |t| (-0.03 * t).exp(),
        move |t, s| (-yield_integral(t, s)).exp(),
    )
    .map_err(err)
}

/// Largest discrepancy between `((D,P)^π)^ν` and `(D,P)^{π∗ν}` on step `dh`.
fn composition_gap(dh: f64) -> Result<f64, String> {
    let g = smooth_gauge(dh)?;
    let pi = CashflowIntensity::from_fn(dh, 1.0, |h| 2.0 * (-2.0 * h).exp()).map_err(err)?;
    let nu = CashflowIntensity::from_fn(dh, 0.5, |h| 1.0 + h).map_err(err)?;
    let lhs = gauge_transform(&gauge_transform(&g, &pi).map_err(err)?, &nu).map_err(err)?;
    let rhs = gauge_transform(&g, &convolve(&pi, &nu).map_err(err)?).map_err(err)?;
    let offsets = lhs.offsets().min(rhs.offsets());
    let mut worst = 0.0f64;
    for i in 0..lhs.times().len() {
        let (dl, dr) = (lhs.deflator()[i], rhs.deflator()[i]);
        worst = worst.max((dl - dr).abs() / dr.abs());
        for jj in 0..offsets {
            worst = worst.max((lhs.p(i, jj) - rhs.p(i, jj)).abs());
        }
    }
    Ok(worst)
}

fn gauge_composition() -> Result<Verdict, String> {
    let gaps: Vec<f64> = C8_DH.iter().map(|&dh| composition_gap(dh)).collect::<Result<_, _>>()?;
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    let first_order = ratios.iter().all(|r| (C8_ORDER.0..=C8_ORDER.1).contains(r));
    let bounded = gaps.iter().zip(C8_DH).all(|(g, dh)| *g <= C8_CONSTANT * dh);
    Ok(verdict(
        first_order && bounded,
        format!(
            "composition gap {:?} at dh {C8_DH:?}, halving ratios {ratios:.3?} (accepted {C8_ORDER:?}, gap <= {C8_CONSTANT} dh)",
            gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>()
        ),
    ))
}

/// Largest `|Ψ(t, s) − e^{rt} Φ(t, e^{−rt} s)|` over a probe set on `n × n` grids.
fn undiscounted_gap(rho: f64, n: usize) -> Result<f64, String> {
    let (k, t_max, sigma, r) = (100.0, 1.0, 0.2, 0.05);
    let psi_spec = CallSpec::new(k, t_max, sigma, rho, r).map_err(err)?;
    // Φ carries the discounted payoff (X − K e^{−rT})⁺
    let phi_spec = CallSpec::new(k * (-r * t_max).exp(), t_max, sigma, rho, 0.0).map_err(err)?;
    let psi = fdsolver::solve_undiscounted(&psi_spec, &PdeGrid::centred(&psi_spec, n, n, DEFAULT_HALF_WIDTH).map_err(err)?)
        .map_err(err)?;
    let phi = fdsolver::solve(&phi_spec, &PdeGrid::centred(&phi_spec, n, n, DEFAULT_HALF_WIDTH).map_err(err)?)
        .map_err(err)?;
    let mut worst = 0.0f64;
    for t in [0.0, 0.25, 0.5] {
        for s in [85.0, 95.0, 100.0, 105.0, 115.0] {
            let lhs = psi.value_at(s, t).map_err(err)?;
            let rhs = (r * t).exp() * phi.value_at((-r * t).exp() * s, t).map_err(err)?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

fn undiscounted_consistency() -> Result<Verdict, String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for rho in [0.0, 0.02] {
        let coarse = undiscounted_gap(rho, C9_N[0])?;
        let fine = undiscounted_gap(rho, C9_N[1])?;
        let ratio = coarse / fine;
        let ok = fine < C9_ATOL && (fine < 1e-12 || (C9_RATIO.0..=C9_RATIO.1).contains(&ratio));
        pass &= ok;
        parts.push(format!(
            "rho={rho}: gap {coarse:.2e} -> {fine:.2e} (ratio {ratio:.2})"
        ));
    }
    Ok(verdict(
        pass,
        format!(
            "{} at {}x{} -> {}x{} (tol {C9_ATOL:.0e} abs, ratio in {C9_RATIO:?})",
            parts.join(", "),
            C9_N[0], C9_N[0], C9_N[1], C9_N[1]
        ),
    ))
}
