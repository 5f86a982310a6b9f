//! Implementations of the `gat` commands.
//!
//! Each command reads a [`RunConfig`], writes CSV tables and a
//! `metadata.json` sidecar into the output directory and returns an
//! [`Outcome`]. Exit codes: `0` success, `1` the analysis flags arbitrage or
//! a mismatch, `2` usage or run error. Outputs depend only on the
//! configuration and the seed; no timestamps or host details are recorded,
//! so reruns are byte-identical.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CompareSpec, PdeSpec, PerturbationSpec, RunConfig, SurfaceSpec};
use crate::error::Error;
use crate::fdsolver::{self, PdeGrid};
use crate::geometry::{kernel_basis, rho, zc_residual};
use crate::pricing::{
    adjudicate, CallSpec, PerturbationOptions, PerturbationSolution, TransformGrid,
};
use crate::simulate::{
    empirical_rho, simulate, write_ensemble, write_ensemble_csv, EstimatorConfig,
};
use crate::surface::PriceSurface;

/// The batch commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckZc,
    Price,
    SolvePde,
    Compare,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::CheckZc => "check-zc",
            Self::Price => "price",
            Self::SolvePde => "solve-pde",
            Self::Compare => "compare",
            Self::Simulate => "simulate",
        }
    }
}

/// Arguments shared by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides the configuration's master seed.
    pub seed: Option<u64>,
}

/// Verdict of a successful run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    /// The analysis detected arbitrage or a mismatch.
    Flagged,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    /// One-line human-readable summary.
    pub summary: String,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Pass => 0,
            Status::Flagged => 1,
        }
    }
}

/// Which stage of a command failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Gauges,
    Geometry,
    Pricing,
    FdSolver,
    Simulate,
    Output,
}

impl Stage {
    fn label(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::Gauges => "gauges",
            Self::Geometry => "geometry",
            Self::Pricing => "pricing",
            Self::FdSolver => "fdsolver",
            Self::Simulate => "simulate",
            Self::Output => "output",
        }
    }
}

/// A failed command, tagged with the module that raised the error.
#[derive(Debug)]
pub struct CommandError {
    pub stage: Stage,
    pub error: Error,
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage.label(), self.error)
    }
}

impl std::error::Error for CommandError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

type CmdResult<T> = std::result::Result<T, CommandError>;

trait Tag<T> {
    fn at(self, stage: Stage) -> CmdResult<T>;
}

impl<T> Tag<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> CmdResult<T> {
        self.map_err(|error| CommandError { stage, error })
    }
}

/// Loads the configuration, runs `command` and writes its outputs.
pub fn run(command: Command, args: &RunArgs) -> CmdResult<Outcome> {
    let mut cfg = RunConfig::load(&args.config).at(Stage::Config)?;
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    run_config(command, &cfg, &args.out)
}

/// Runs `command` on an already parsed configuration.
pub fn run_config(command: Command, cfg: &RunConfig, out: &Path) -> CmdResult<Outcome> {
    fs::create_dir_all(out).map_err(Error::from).at(Stage::Output)?;
    let mut writer = OutputDir {
        root: out.to_path_buf(),
        files: Vec::new(),
    };
    let (status, summary, results) = match command {
        Command::CheckZc => check_zc(cfg, &mut writer)?,
        Command::Price => price(cfg, &mut writer)?,
        Command::SolvePde => solve_pde(cfg, &mut writer)?,
        Command::Compare => compare(cfg, &mut writer)?,
        Command::Simulate => simulate_cmd(cfg, &mut writer)?,
    };
    let metadata = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "status": status,
        "summary": summary,
        "seed": cfg.seed_or_default(),
        "config": cfg,
        "results": results,
    });
    writer.json("metadata.json", &metadata)?;
    Ok(Outcome {
        status,
        summary,
        files: writer.files,
    })
}

struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    fn create(&mut self, name: &str) -> CmdResult<BufWriter<File>> {
        let f = File::create(self.root.join(name))
            .map_err(Error::from)
            .at(Stage::Output)?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, name: &str, value: &Value) -> CmdResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(Error::from)
            .at(Stage::Output)?;
        writeln!(w).map_err(Error::from).at(Stage::Output)?;
        w.flush().map_err(Error::from).at(Stage::Output)
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> CmdResult<()> {
        let w = self.create(name)?;
        let mut csv = csv::Writer::from_writer(w);
        let write = |csv: &mut csv::Writer<BufWriter<File>>| -> crate::Result<()> {
            csv.write_record(header)?;
            for r in rows {
                csv.write_record(r)?;
            }
            csv.flush()?;
            Ok(())
        };
        write(&mut csv).at(Stage::Output)
    }

    fn surface(&mut self, name: &str, surface: &PriceSurface) -> CmdResult<()> {
        let w = self.create(name)?;
        surface.write_csv(w).at(Stage::Output)
    }
}

fn strings(header: &[&str]) -> Vec<String> {
    header.iter().map(|s| s.to_string()).collect()
}

fn check_zc(cfg: &RunConfig, out: &mut OutputDir) -> CmdResult<(Status, String, Value)> {
    let market = cfg.market().at(Stage::Config)?;
    let coeffs = market.coefficients().at(Stage::Config)?;
    let rows: Vec<(f64, f64, usize, Vec<f64>)> = coeffs
        .iter()
        .map(|c| {
            let b = kernel_basis(&c.sigma).dim();
            (c.t, zc_residual(c), b, rho(c).iter().copied().collect())
        })
        .collect();
    let width = rows.iter().map(|r| r.2).max().unwrap_or(0);
    let mut header = strings(&["t", "residual", "kernel_dim"]);
    header.extend((1..=width).map(|j| format!("rho_{j}")));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(t, res, b, r)| {
            let mut row = vec![t.to_string(), res.to_string(), b.to_string()];
            row.extend((0..width).map(|j| r.get(j).map_or(String::new(), f64::to_string)));
            row
        })
        .collect();
    out.csv("zc_report.csv", &header, &table)?;
    let max_residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = max_residual < market.tolerance;
    let status = if pass { Status::Pass } else { Status::Flagged };
    let summary = format!(
        "max zero-curvature residual {max_residual:.3e} {} tolerance {:.1e} over {} time points",
        if pass { "below" } else { "exceeds" },
        market.tolerance,
        rows.len()
    );
    let results = json!({
        "max_residual": max_residual,
        "tolerance": market.tolerance,
        "points": rows.iter().map(|(t, res, b, r)| json!({
            "t": t, "residual": res, "kernel_dim": b, "rho": r,
        })).collect::<Vec<_>>(),
    });
    Ok((status, summary, results))
}

fn perturbation_solution(call: &CallSpec, p: &PerturbationSpec) -> CmdResult<PerturbationSolution> {
    let grid = TransformGrid::for_spec(call, p.tau_nodes, p.y_nodes).at(Stage::Pricing)?;
    let options = PerturbationOptions {
        constant: p.constant,
        sign: p.sign,
        tolerance: p.tolerance,
        ..PerturbationOptions::default()
    };
    PerturbationSolution::build(call, &grid, options).at(Stage::Pricing)
}

fn undiscounted_rows(
    surface: &SurfaceSpec,
    call: &CallSpec,
    mut price: impl FnMut(f64, f64) -> crate::Result<f64>,
) -> crate::Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for &t in &surface.times {
        for s in surface.spots(call) {
            rows.push(vec![t.to_string(), s.to_string(), price(s, t)?.to_string()]);
        }
    }
    Ok(rows)
}

fn price(cfg: &RunConfig, out: &mut OutputDir) -> CmdResult<(Status, String, Value)> {
    let call = *cfg.call().at(Stage::Config)?;
    let surface = cfg.surface_or_default().at(Stage::Config)?;
    let p = cfg.perturbation.unwrap_or_default();
    let sol = perturbation_solution(&call, &p)?;
    let table = PriceSurface::tabulate(&surface.times, &surface.spots(&call), |t, x| {
        sol.price_discounted(x, t)
    })
    .at(Stage::Pricing)?;
    out.surface("surface.csv", &table)?;
    if call.r != 0.0 {
        let rows = undiscounted_rows(&surface, &call, |s, t| sol.price_undiscounted(s, t))
            .at(Stage::Pricing)?;
        out.csv("surface_undiscounted.csv", &strings(&["t", "S", "Psi"]), &rows)?;
    }
    let atm = sol.price_discounted(call.k, 0.0).at(Stage::Pricing)?;
    let results = json!({
        "method": "perturbation",
        "convention": {
            "constant": p.constant.label(),
            "sign": p.sign.label(),
        },
        "transform_grid": {"tau_nodes": p.tau_nodes, "y_nodes": p.y_nodes},
        "diagnostics": sol.diagnostics(),
        "warning": call.warning(),
        "atm_price_t0": atm,
    });
    let summary = format!(
        "priced {} points; quadrature self-convergence {:.2e} (requested {:.1e})",
        table.points.len(),
        sol.diagnostics().achieved,
        sol.diagnostics().requested
    );
    Ok((Status::Pass, summary, results))
}

fn fd_grid(call: &CallSpec, pde: &PdeSpec) -> CmdResult<PdeGrid> {
    PdeGrid::centred(call, pde.nx, pde.nt, pde.half_width).at(Stage::FdSolver)
}

fn solve_pde(cfg: &RunConfig, out: &mut OutputDir) -> CmdResult<(Status, String, Value)> {
    let call = *cfg.call().at(Stage::Config)?;
    let surface = cfg.surface_or_default().at(Stage::Config)?;
    let pde = cfg.pde.unwrap_or_default();
    let grid = fd_grid(&call, &pde)?;
    let sol = fdsolver::solve(&call, &grid).at(Stage::FdSolver)?;
    let table = PriceSurface::tabulate(&surface.times, &surface.spots(&call), |t, x| {
        sol.value_at(x, t)
    })
    .at(Stage::FdSolver)?;
    out.surface("surface.csv", &table)?;
    if call.r != 0.0 {
        let und = fdsolver::solve_undiscounted(&call, &grid).at(Stage::FdSolver)?;
        let rows = undiscounted_rows(&surface, &call, |s, t| und.value_at(s, t))
            .at(Stage::FdSolver)?;
        out.csv("surface_undiscounted.csv", &strings(&["t", "S", "Psi"]), &rows)?;
    }
    let results = json!({
        "method": "finite_difference",
        "grid": {
            "nx": grid.nx(),
            "nt": grid.nt(),
            "x_min": grid.x_nodes[0],
            "x_max": grid.x_nodes[grid.nx()],
            "boundary": grid.boundary,
        },
        "atm_price_t0": sol.value_at(call.k, 0.0).at(Stage::FdSolver)?,
    });
    let summary = format!(
        "solved on {}x{} grid; {} points written",
        grid.nx(),
        grid.nt(),
        table.points.len()
    );
    Ok((Status::Pass, summary, results))
}

fn compare(cfg: &RunConfig, out: &mut OutputDir) -> CmdResult<(Status, String, Value)> {
    let call = *cfg.call().at(Stage::Config)?;
    let surface = cfg.surface_or_default().at(Stage::Config)?;
    let p = cfg.perturbation.unwrap_or_default();
    let pde = cfg.pde.unwrap_or_default();
    let cmp: CompareSpec = cfg.compare.clone().unwrap_or_default();
    if cmp.rhos.len() < 2 || cmp.probes.is_empty() {
        return Err(CommandError {
            stage: Stage::Config,
            error: Error::Config("[compare] needs at least two rhos and one probe".into()),
        });
    }

    // surface difference at the configured rho
    let sol = perturbation_solution(&call, &p)?;
    let spots = surface.spots(&call);
    let pert = PriceSurface::tabulate(&surface.times, &spots, |t, x| sol.price_discounted(x, t))
        .at(Stage::Pricing)?;
    let fd = fdsolver::solve(&call, &fd_grid(&call, &pde)?).at(Stage::FdSolver)?;
    let fds = PriceSurface::tabulate(&surface.times, &spots, |t, x| fd.value_at(x, t))
        .at(Stage::FdSolver)?;
    let rows: Vec<Vec<String>> = pert
        .points
        .iter()
        .zip(&fds.points)
        .map(|(a, b)| {
            vec![
                a.t.to_string(),
                a.x.to_string(),
                a.phi.to_string(),
                b.phi.to_string(),
                (a.phi - b.phi).to_string(),
            ]
        })
        .collect();
    out.csv(
        "surface_diff.csv",
        &strings(&["t", "X", "Phi_perturbation", "Phi_fd", "diff"]),
        &rows,
    )?;
    let max_diff = pert.max_abs_diff(&fds).unwrap_or(f64::INFINITY);
    let diff_limit = cmp.tolerance * call.k;

    // order study and adjudication of the nonlinear normalisation
    let probes: Vec<(f64, f64)> = cmp.probes.iter().map(|m| (m * call.k, 0.0)).collect();
    let adj = adjudicate(&sol, &probes, &cmp.rhos, |r| {
        fdsolver::richardson_prices(&call.with_rho(r), cmp.reference_n, &probes, false)
    })
    .at(Stage::Pricing)?;
    let mut table = Vec::new();
    for row in &adj.rows {
        for (i, (r, e)) in row.rhos.iter().zip(&row.errors).enumerate() {
            table.push(vec![
                row.constant.label().to_string(),
                row.sign.label().to_string(),
                r.to_string(),
                e.to_string(),
                if i == 0 {
                    String::new()
                } else {
                    row.ratios[i - 1].to_string()
                },
                row.third_order.to_string(),
            ]);
        }
    }
    out.csv(
        "order_table.csv",
        &strings(&["constant", "sign", "rho", "max_error", "ratio", "third_order"]),
        &table,
    )?;
    let configured = (p.constant, p.sign);
    let adjudication_ok = adj.passing == 1 && adj.chosen == Some(configured);
    let diff_ok = max_diff < diff_limit;
    let status = if adjudication_ok && diff_ok {
        Status::Pass
    } else {
        Status::Flagged
    };
    let chosen = adj.chosen.map(|(c, s)| json!({"constant": c.label(), "sign": s.label()}));
    let configured_row = adj.row(configured.0, configured.1);
    let summary = format!(
        "max |perturbation - fd| = {max_diff:.3e} (limit {diff_limit:.1e}); {} third-order candidate(s), ratios for configured convention {:?}",
        adj.passing,
        configured_row.map(|r| r.ratios.clone()).unwrap_or_default()
    );
    let results = json!({
        "max_abs_diff": max_diff,
        "diff_limit": diff_limit,
        "adjudication": {
            "chosen": chosen,
            "passing": adj.passing,
            "ratio_range": crate::pricing::adjudication::ORDER_RATIO_RANGE,
            "rows": adj.rows.iter().map(|r| json!({
                "constant": r.constant.label(),
                "sign": r.sign.label(),
                "rhos": r.rhos,
                "errors": r.errors,
                "ratios": r.ratios,
                "third_order": r.third_order,
            })).collect::<Vec<_>>(),
        },
        "reference": {"method": "finite_difference_richardson", "n": cmp.reference_n},
        "configured": {"constant": p.constant.label(), "sign": p.sign.label()},
    });
    Ok((status, summary, results))
}

fn simulate_cmd(cfg: &RunConfig, out: &mut OutputDir) -> CmdResult<(Status, String, Value)> {
    let market = cfg.market().at(Stage::Config)?;
    let sim = cfg.simulation().at(Stage::Config)?;
    let seed = cfg.seed_or_default();
    let steps = (sim.horizon / sim.dt).round() as usize;
    let schedule = market.schedule(sim.dt, steps.max(1)).at(Stage::Config)?;
    let ensemble =
        simulate(&schedule, &sim.s0, sim.paths, sim.dt, sim.horizon, seed).at(Stage::Simulate)?;
    {
        let w = out.create("ensemble.gate")?;
        write_ensemble(w, &ensemble).at(Stage::Output)?;
    }
    if sim.csv {
        let w = out.create("ensemble.csv")?;
        write_ensemble_csv(w, &ensemble).at(Stage::Output)?;
    }
    let est = cfg
        .estimator
        .unwrap_or_else(|| EstimatorConfig::defaults(sim.dt, sim.paths));
    let lag = est.validate(sim.dt).at(Stage::Config)?;
    let buckets: Vec<(f64, f64)> = if sim.buckets.is_empty() {
        vec![(est.t_min, (steps - lag) as f64 * sim.dt)]
    } else {
        sim.buckets.iter().map(|b| (b[0], b[1])).collect()
    };
    let points = empirical_rho(&ensemble, &schedule, &buckets, &est).at(Stage::Simulate)?;
    let mut rows = Vec::new();
    let mut flagged = false;
    let mut all_match = true;
    let mut reports = Vec::new();
    for p in &points {
        let first = (p.t_lo / sim.dt).round() as usize;
        let model_rho: Vec<f64> = rho(schedule.at(first)).iter().copied().collect();
        let zero = vec![0.0; p.rho.len()];
        let arbitrage = !p.consistent_with(&zero, sim.z);
        let matches = p.consistent_with(&model_rho, sim.z);
        flagged |= arbitrage;
        all_match &= matches;
        for (j, (r, se)) in p.rho.iter().zip(&p.rho_se).enumerate() {
            rows.push(vec![
                p.t_lo.to_string(),
                p.t_hi.to_string(),
                (j + 1).to_string(),
                r.to_string(),
                se.to_string(),
                model_rho[j].to_string(),
            ]);
        }
        reports.push(json!({
            "bucket": p,
            "model_rho": model_rho,
            "consistent_with_zero": !arbitrage,
            "consistent_with_model": matches,
        }));
    }
    out.csv(
        "rho_report.csv",
        &strings(&["t_lo", "t_hi", "component", "rho_hat", "se", "rho_model"]),
        &rows,
    )?;
    let status = if flagged { Status::Flagged } else { Status::Pass };
    let summary = format!(
        "{} paths x {steps} steps; rho-hat {} zero, {} the model within {} SE",
        sim.paths,
        if flagged { "differs from" } else { "consistent with" },
        if all_match { "matches" } else { "does not match" },
        sim.z
    );
    let results = json!({
        "paths": sim.paths,
        "steps": steps,
        "dt": sim.dt,
        "estimator": est,
        "buckets": reports,
    });
    Ok((status, summary, results))
}
