//! Run configuration: one TOML document per run, validated before dispatch.
//!
//! Every table rejects unknown keys, and the document carries a
//! `schema_version` that must equal [`SCHEMA_VERSION`]. A command reads only
//! the tables it needs and reports a missing table as a configuration error.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [call]
//! k = 100.0
//! maturity = 1.0
//! sigma = 0.2
//! rho = 0.02
//! r = 0.0
//!
//! [surface]
//! times = [0.0, 0.5, 1.0]
//! moneyness = [0.9, 1.0, 1.1]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ItoCoefficients;
use crate::pricing::{CallSpec, NonlinearConstant, SourceSign};
use crate::simulate::{CoefficientSchedule, EstimatorConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed for every random draw of the run.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub market: Option<MarketSpec>,
    #[serde(default)]
    pub call: Option<CallSpec>,
    #[serde(default)]
    pub surface: Option<SurfaceSpec>,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub pde: Option<PdeSpec>,
    #[serde(default)]
    pub compare: Option<CompareSpec>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
}

/// Itô market coefficients, piecewise constant between sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub samples: Vec<MarketSample>,
    /// Largest zero-curvature residual accepted by `check-zc`.
    #[serde(default = "default_zc_tolerance")]
    pub tolerance: f64,
}

fn default_zc_tolerance() -> f64 {
    1e-10
}

/// Coefficients in effect from time `t` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSample {
    #[serde(default)]
    pub t: f64,
    pub alpha: Vec<f64>,
    /// Rows of the `N × K` loading matrix.
    pub sigma: Vec<Vec<f64>>,
    pub r: Vec<f64>,
}

impl MarketSample {
    pub fn coefficients(&self) -> Result<ItoCoefficients> {
        ItoCoefficients::from_rows(&self.alpha, &self.sigma, &self.r, self.t)
    }
}

impl MarketSpec {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Config("market needs at least one sample".into()))?
            .coefficients()?;
        for w in self.samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Config("market sample times must increase".into()));
            }
        }
        for s in &self.samples {
            let c = s.coefficients()?;
            if c.assets() != first.assets() || c.factors() != first.factors() {
                return Err(Error::Config("market samples change shape".into()));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("market tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Result<Vec<ItoCoefficients>> {
        self.samples.iter().map(MarketSample::coefficients).collect()
    }

    /// The coefficient schedule on a grid of `steps` steps of size `dt`:
    /// step `i` uses the last sample with `t ≤ i·dt`.
    pub fn schedule(&self, dt: f64, steps: usize) -> Result<CoefficientSchedule> {
        self.validate()?;
        let coeffs = self.coefficients()?;
        if coeffs.len() == 1 {
            return Ok(CoefficientSchedule::constant(coeffs[0].clone()));
        }
        let per_step = (0..steps)
            .map(|i| {
                let t = i as f64 * dt;
                let k = self
                    .samples
                    .iter()
                    .rposition(|s| s.t <= t + 1e-12)
                    .unwrap_or(0);
                let c = &coeffs[k];
                ItoCoefficients::new(
                    DVector::from(c.alpha.as_slice().to_vec()),
                    DMatrix::from(c.sigma.clone()),
                    DVector::from(c.r.as_slice().to_vec()),
                    t,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        CoefficientSchedule::sampled(per_step)
    }
}

/// Output lattice of a price surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    /// Valuation times in `[0, T]`.
    pub times: Vec<f64>,
    /// Underlying values as multiples of the strike.
    pub moneyness: Vec<f64>,
}

impl SurfaceSpec {
    /// Five times and nine moneyness levels spanning `[0, T] × [0.8, 1.2]`.
    pub fn default_for(call: &CallSpec) -> Self {
        Self {
            times: (0..5).map(|i| call.maturity * i as f64 / 4.0).collect(),
            moneyness: (0..9).map(|i| 0.8 + 0.05 * i as f64).collect(),
        }
    }

    pub fn validate(&self, call: &CallSpec) -> Result<()> {
        if self.times.is_empty() || self.moneyness.is_empty() {
            return Err(Error::Config("surface needs times and moneyness levels".into()));
        }
        if let Some(t) = self.times.iter().find(|t| !(**t >= 0.0 && **t <= call.maturity)) {
            return Err(Error::Config(format!(
                "surface time {t} outside [0, {}]",
                call.maturity
            )));
        }
        if let Some(m) = self.moneyness.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::Config(format!("moneyness {m} must be positive")));
        }
        Ok(())
    }

    pub fn spots(&self, call: &CallSpec) -> Vec<f64> {
        self.moneyness.iter().map(|m| m * call.k).collect()
    }
}

/// Settings of the perturbation-series solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub tau_nodes: usize,
    pub y_nodes: usize,
    pub constant: NonlinearConstant,
    pub sign: SourceSign,
    /// Accepted relative quadrature self-convergence.
    pub tolerance: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            tau_nodes: 24,
            y_nodes: 81,
            constant: NonlinearConstant::Dimensionless,
            sign: SourceSign::Derived,
            tolerance: 1e-4,
        }
    }
}

/// Settings of the finite-difference solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSpec {
    /// Space intervals.
    pub nx: usize,
    /// Time intervals.
    pub nt: usize,
    /// Domain half-width in units of `σ√T` around the strike (log scale).
    pub half_width: f64,
}

impl Default for PdeSpec {
    fn default() -> Self {
        Self {
            nx: 256,
            nt: 256,
            half_width: crate::fdsolver::DEFAULT_HALF_WIDTH,
        }
    }
}

/// Settings of the perturbation-versus-finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSpec {
    /// `ρ` values of the order study, halving from one to the next.
    pub rhos: Vec<f64>,
    /// Probe moneyness levels at `t = 0`.
    pub probes: Vec<f64>,
    /// Base resolution of the Richardson-extrapolated reference.
    pub reference_n: usize,
    /// Largest accepted surface difference, in units of the strike.
    pub tolerance: f64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            rhos: vec![0.04, 0.02, 0.01],
            probes: vec![0.9, 1.0, 1.1],
            reference_n: 512,
            tolerance: 1e-3,
        }
    }
}

/// Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Initial deflated prices.
    pub s0: Vec<f64>,
    /// Time buckets `[t_lo, t_hi]` over which `ρ̂` is averaged.
    #[serde(default)]
    pub buckets: Vec<[f64; 2]>,
    /// Also export the ensemble as CSV (small runs only).
    #[serde(default)]
    pub csv: bool,
    /// Standard errors within which `ρ̂` must match the model's `ρ`.
    #[serde(default = "default_z")]
    pub z: f64,
}

fn default_z() -> f64 {
    3.0
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if let Some(c) = &cfg.call {
            c.validate().map_err(|e| Error::Config(format!("[call]: {e}")))?;
        }
        if let Some(m) = &cfg.market {
            m.validate().map_err(|e| Error::Config(format!("[market]: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn market(&self) -> Result<&MarketSpec> {
        self.market
            .as_ref()
            .ok_or_else(|| Error::Config("missing [market] table".into()))
    }

    pub fn call(&self) -> Result<&CallSpec> {
        self.call
            .as_ref()
            .ok_or_else(|| Error::Config("missing [call] table".into()))
    }

    pub fn simulation(&self) -> Result<&SimulationSpec> {
        self.simulation
            .as_ref()
            .ok_or_else(|| Error::Config("missing [simulation] table".into()))
    }

    pub fn surface_or_default(&self) -> Result<SurfaceSpec> {
        let call = self.call()?;
        let s = self
            .surface
            .clone()
            .unwrap_or_else(|| SurfaceSpec::default_for(call));
        s.validate(call)?;
        Ok(s)
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
