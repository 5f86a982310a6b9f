use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids: {0}")]
    GridIncompatible(String),

    #[error("term-structure horizon too short: need {needed} maturity offsets, have {available}")]
    Horizon { needed: usize, available: usize },

    #[error("degenerate gauge transform at t = {t}: denominator integral {value}")]
    DegenerateTransform { t: f64, value: f64 },

    #[error("degenerate portfolio: deflator vanishes at t = {t}")]
    DegeneratePortfolio { t: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("{what} = {value} lies outside the grid coverage [{lo}, {hi}]")]
    Extrapolation {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("quadrature did not converge: achieved relative change {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("finite-difference step did not converge after {halvings} step halvings at t = {t}")]
    NonConvergent { halvings: u32, t: f64 },

    #[error("insufficient neighbours for conditional expectation: need {needed}, have {available}")]
    InsufficientNeighbors { needed: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed ensemble file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, name: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(value: f64, name: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be positive, got {value}")))
    }
}
