//! C ABI over `gat-core`.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`GatStatus`]; results are written
//!   through out-pointers only on success.
//! * Objects are exposed as opaque handles created by `*_new`/`*_solve`/
//!   `*_simulate`/`*_read` functions and released with the matching
//!   `*_free`, which accepts null.
//! * On failure, a message is stored per thread and can be copied out with
//!   [`gat_last_error_message`].
//! * Matrices are row-major `double` arrays; `sigma` is `n_assets ×
//!   n_factors`.
//! * Panics never cross the boundary; they are reported as
//!   [`GatStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use gat_core::fdsolver::{self, PdeGrid, DEFAULT_HALF_WIDTH};
use gat_core::geometry::{self, ItoCoefficients};
use gat_core::pricing::{CallSpec, PerturbationOptions, PerturbationSolution, TransformGrid};
use gat_core::simulate::{
    empirical_rho, read_ensemble, simulate, write_ensemble, CoefficientSchedule, EstimatorConfig,
    PathEnsemble,
};
use gat_core::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of range or inconsistent.
    InvalidInput = 2,
    /// The query lies outside the solution's domain or grid.
    Domain = 3,
    /// A grid could not be built or grids are incompatible.
    Grid = 4,
    /// A numerical method did not reach its accuracy target.
    Numerical = 5,
    /// Too few paths for the requested estimator.
    InsufficientData = 6,
    /// Reading or writing a file failed.
    Io = 7,
    /// A file is not in the expected format.
    Format = 8,
    /// The output buffer is too small; the required length was reported.
    BufferTooSmall = 9,
    /// An internal panic was caught.
    Panic = 10,
}

impl From<&Error> for GatStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::Shape(_)
            | Error::Config(_)
            | Error::DegeneratePortfolio { .. }
            | Error::DegenerateTransform { .. } => Self::InvalidInput,
            Error::Domain(_) | Error::Extrapolation { .. } => Self::Domain,
            Error::Grid(_) | Error::GridIncompatible(_) | Error::Horizon { .. } => Self::Grid,
            Error::Quadrature { .. } | Error::NonConvergent { .. } => Self::Numerical,
            Error::InsufficientNeighbors { .. } => Self::InsufficientData,
            Error::Io(_) => Self::Io,
            Error::Format(_) | Error::Csv(_) | Error::Json(_) => Self::Format,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: GatStatus, msg: impl Into<String>) -> GatStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> GatStatus {
    let status = GatStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), GatStatus>) -> GatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GatStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(GatStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn status(self) -> Result<T, GatStatus>;
}

impl<T> OrStatus<T> for gat_core::Result<T> {
    fn status(self) -> Result<T, GatStatus> {
        self.map_err(from_error)
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), GatStatus> {
    if p.is_null() {
        Err(fail(GatStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null-checked and point to `len` readable values.
unsafe fn input<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], GatStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to a writable value.
unsafe fn write<T>(p: *mut T, value: T, name: &str) -> Result<(), GatStatus> {
    non_null(p, name)?;
    p.write(value);
    Ok(())
}

/// # Safety
/// Pointers as documented on the public functions taking market data.
unsafe fn coefficients(
    alpha: *const f64,
    sigma: *const f64,
    r: *const f64,
    n_assets: usize,
    n_factors: usize,
) -> Result<ItoCoefficients, GatStatus> {
    if n_assets == 0 || n_factors == 0 {
        return Err(fail(GatStatus::InvalidInput, "need at least one asset and one factor"));
    }
    let alpha = input(alpha, n_assets, "alpha")?;
    let sigma = input(sigma, n_assets * n_factors, "sigma")?;
    let r = input(r, n_assets, "r")?;
    let rows: Vec<Vec<f64>> = sigma.chunks(n_factors).map(<[f64]>::to_vec).collect();
    ItoCoefficients::from_rows(alpha, &rows, r, 0.0).status()
}

fn call_spec(k: f64, maturity: f64, sigma: f64, rho: f64, r: f64) -> Result<CallSpec, GatStatus> {
    CallSpec::new(k, maturity, sigma, rho, r).status()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns the full message
/// length in bytes, excluding the terminator. Pass a null `buf` to query the
/// length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gat_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Black-Scholes call price `C(s, k, τ, σ, r)`; NaN for invalid inputs.
#[no_mangle]
pub extern "C" fn gat_bs_call(s: f64, k: f64, tau: f64, sigma: f64, r: f64) -> f64 {
    if !(s > 0.0 && k > 0.0 && tau >= 0.0 && sigma > 0.0) || !r.is_finite() {
        return f64::NAN;
    }
    gat_core::classical::bs_call(s, k, tau, sigma, r)
}

/// Zero-curvature residual `‖P_perp(α + r)‖` of one coefficient set.
///
/// # Safety
/// `alpha` and `r` point to `n_assets` values, `sigma` to
/// `n_assets * n_factors` values (row-major); `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_zc_residual(
    alpha: *const f64,
    sigma: *const f64,
    r: *const f64,
    n_assets: usize,
    n_factors: usize,
    out: *mut f64,
) -> GatStatus {
    guard(|| {
        let c = coefficients(alpha, sigma, r, n_assets, n_factors)?;
        write(out, geometry::zc_residual(&c), "out")
    })
}

/// Arbitrage measure `ρ = J†(α + r)` in the canonical kernel basis. Its
/// length (the kernel dimension) is written to `out_len`; when it exceeds
/// `capacity`, nothing is copied and `BufferTooSmall` is returned.
///
/// # Safety
/// As [`gat_zc_residual`]; `out_rho` points to `capacity` writable values
/// (may be null when `capacity` is 0) and `out_len` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_rho(
    alpha: *const f64,
    sigma: *const f64,
    r: *const f64,
    n_assets: usize,
    n_factors: usize,
    out_rho: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> GatStatus {
    guard(|| {
        let c = coefficients(alpha, sigma, r, n_assets, n_factors)?;
        let rho = geometry::rho(&c);
        write(out_len, rho.len(), "out_len")?;
        if rho.len() > capacity {
            return Err(fail(
                GatStatus::BufferTooSmall,
                format!("rho has {} components, buffer holds {capacity}", rho.len()),
            ));
        }
        if !rho.is_empty() {
            non_null(out_rho, "out_rho")?;
            ptr::copy_nonoverlapping(rho.as_ptr(), out_rho, rho.len());
        }
        Ok(())
    })
}

/// Opaque perturbation-series solution.
pub struct GatPerturbation(PerturbationSolution);

/// Builds the second-order perturbation solution for a call with strike
/// `k`, maturity `maturity`, volatility `sigma`, arbitrage measure `rho` and
/// rate `r` on the default transform grid.
///
/// # Safety
/// `out` must be writable; on success it receives a handle to free with
/// [`gat_perturbation_free`].
#[no_mangle]
pub unsafe extern "C" fn gat_perturbation_new(
    k: f64,
    maturity: f64,
    sigma: f64,
    rho: f64,
    r: f64,
    out: *mut *mut GatPerturbation,
) -> GatStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = call_spec(k, maturity, sigma, rho, r)?;
        let grid = TransformGrid::default_for(&spec).status()?;
        let sol = PerturbationSolution::build(&spec, &grid, PerturbationOptions::default()).status()?;
        write(out, Box::into_raw(Box::new(GatPerturbation(sol))), "out")
    })
}

/// Discounted price `Φ(t, X)`.
///
/// # Safety
/// `h` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_perturbation_price(
    h: *const GatPerturbation,
    x: f64,
    t: f64,
    out: *mut f64,
) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let v = (*h).0.price_discounted(x, t).status()?;
        write(out, v, "out")
    })
}

/// Undiscounted price `Ψ(t, S)` at the rate given at construction.
///
/// # Safety
/// `h` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_perturbation_price_undiscounted(
    h: *const GatPerturbation,
    s: f64,
    t: f64,
    out: *mut f64,
) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let v = (*h).0.price_undiscounted(s, t).status()?;
        write(out, v, "out")
    })
}

/// Releases a perturbation handle; null is ignored.
///
/// # Safety
/// `h` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gat_perturbation_free(h: *mut GatPerturbation) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Opaque finite-difference solution.
pub struct GatPde(PdeGrid);

/// Solves the pricing PDE on a centred `nx × nt` grid, for the discounted
/// price (`undiscounted = false`) or the undiscounted price at rate `r`.
///
/// # Safety
/// `out` must be writable; on success it receives a handle to free with
/// [`gat_pde_free`].
#[no_mangle]
pub unsafe extern "C" fn gat_pde_solve(
    k: f64,
    maturity: f64,
    sigma: f64,
    rho: f64,
    r: f64,
    nx: usize,
    nt: usize,
    undiscounted: bool,
    out: *mut *mut GatPde,
) -> GatStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = call_spec(k, maturity, sigma, rho, r)?;
        let grid = PdeGrid::centred(&spec, nx, nt, DEFAULT_HALF_WIDTH).status()?;
        let sol = if undiscounted {
            fdsolver::solve_undiscounted(&spec, &grid)
        } else {
            fdsolver::solve(&spec, &grid)
        }
        .status()?;
        write(out, Box::into_raw(Box::new(GatPde(sol))), "out")
    })
}

/// Price at `(x, t)`; `t` must be a time node of the grid.
///
/// # Safety
/// `h` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_pde_value(h: *const GatPde, x: f64, t: f64, out: *mut f64) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let v = (*h).0.value_at(x, t).status()?;
        write(out, v, "out")
    })
}

/// Releases a finite-difference handle; null is ignored.
///
/// # Safety
/// `h` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gat_pde_free(h: *mut GatPde) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Opaque Monte Carlo ensemble.
pub struct GatEnsemble(PathEnsemble);

/// Simulates `paths` paths of the constant-coefficient model on
/// `[0, horizon]` with step `dt` and master seed `seed`.
///
/// # Safety
/// Market pointers as in [`gat_zc_residual`]; `s0` points to `n_assets`
/// values; `out` is writable and receives a handle to free with
/// [`gat_ensemble_free`].
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_simulate(
    alpha: *const f64,
    sigma: *const f64,
    r: *const f64,
    n_assets: usize,
    n_factors: usize,
    s0: *const f64,
    paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    out: *mut *mut GatEnsemble,
) -> GatStatus {
    guard(|| {
        non_null(out, "out")?;
        let c = coefficients(alpha, sigma, r, n_assets, n_factors)?;
        let s0 = input(s0, n_assets, "s0")?;
        let e = simulate(&CoefficientSchedule::constant(c), s0, paths, dt, horizon, seed).status()?;
        write(out, Box::into_raw(Box::new(GatEnsemble(e))), "out")
    })
}

/// Path, step, asset and factor counts of an ensemble.
///
/// # Safety
/// `h` is a live handle; every out-pointer is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_dims(
    h: *const GatEnsemble,
    paths: *mut usize,
    steps: *mut usize,
    assets: *mut usize,
    factors: *mut usize,
) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let e = &(*h).0;
        write(paths, e.paths(), "paths")?;
        write(steps, e.steps(), "steps")?;
        write(assets, e.assets(), "assets")?;
        write(factors, e.factors(), "factors")
    })
}

/// Asset value `Ŝ^asset` on path `path` at step `step`.
///
/// # Safety
/// `h` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_price(
    h: *const GatEnsemble,
    path: usize,
    step: usize,
    asset: usize,
    out: *mut f64,
) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let e = &(*h).0;
        if path >= e.paths() || step > e.steps() || asset >= e.assets() {
            return Err(fail(
                GatStatus::Domain,
                format!("index ({path}, {step}, {asset}) outside the ensemble"),
            ));
        }
        write(out, e.s.get(path, step, asset), "out")
    })
}

/// Bucket-averaged empirical arbitrage measure over `[t_lo, t_hi]` with the
/// default estimator settings, for the constant-coefficient model the
/// ensemble was simulated from. Writes the kernel dimension to `out_len`
/// and, when it fits in `capacity`, the estimates and standard errors.
///
/// # Safety
/// `h` is a live handle; market pointers as in [`gat_zc_residual`];
/// `out_rho` and `out_se` point to `capacity` writable values (may be null
/// when `capacity` is 0); `out_len` is writable.
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_empirical_rho(
    h: *const GatEnsemble,
    alpha: *const f64,
    sigma: *const f64,
    r: *const f64,
    t_lo: f64,
    t_hi: f64,
    out_rho: *mut f64,
    out_se: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let e = &(*h).0;
        let c = coefficients(alpha, sigma, r, e.assets(), e.factors())?;
        let cfg = EstimatorConfig::defaults(e.dt, e.paths());
        let model = CoefficientSchedule::constant(c);
        let points = empirical_rho(e, &model, &[(t_lo, t_hi)], &cfg).status()?;
        let p = &points[0];
        write(out_len, p.rho.len(), "out_len")?;
        if p.rho.len() > capacity {
            return Err(fail(
                GatStatus::BufferTooSmall,
                format!("rho has {} components, buffer holds {capacity}", p.rho.len()),
            ));
        }
        if !p.rho.is_empty() {
            non_null(out_rho, "out_rho")?;
            non_null(out_se, "out_se")?;
            ptr::copy_nonoverlapping(p.rho.as_ptr(), out_rho, p.rho.len());
            ptr::copy_nonoverlapping(p.rho_se.as_ptr(), out_se, p.rho.len());
        }
        Ok(())
    })
}

/// # Safety
/// `path` is a valid NUL-terminated string.
unsafe fn path_arg(path: *const c_char) -> Result<String, GatStatus> {
    non_null(path, "path")?;
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(GatStatus::InvalidInput, "path is not valid UTF-8"))
}

/// Writes the ensemble to a binary file.
///
/// # Safety
/// `h` is a live handle; `path` is a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_write(h: *const GatEnsemble, path: *const c_char) -> GatStatus {
    guard(|| {
        non_null(h, "handle")?;
        let path = path_arg(path)?;
        let f = File::create(&path).map_err(|e| from_error(e.into()))?;
        write_ensemble(BufWriter::new(f), &(*h).0).status()
    })
}

/// Reads an ensemble from a binary file.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is writable and receives a
/// handle to free with [`gat_ensemble_free`].
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_read(path: *const c_char, out: *mut *mut GatEnsemble) -> GatStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let f = File::open(&path).map_err(|e| from_error(e.into()))?;
        let e = read_ensemble(BufReader::new(f)).status()?;
        write(out, Box::into_raw(Box::new(GatEnsemble(e))), "out")
    })
}

/// Releases an ensemble handle; null is ignored.
///
/// # Safety
/// `h` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gat_ensemble_free(h: *mut GatEnsemble) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
