//! Choice of the normalisation of the nonlinear source by convergence order.
//!
//! The two candidate constants (`2K/σ²`, `2/σ²`) and the two signs give four
//! series. Against an independent reference solution of the pricing PDE a
//! correct second-order series leaves an `O(ρ³)` remainder, so its error
//! shrinks by a factor close to 8 whenever `ρ` is halved. Every other
//! candidate leaves an `O(ρ)` or `O(ρ²)` error, or diverges.

use serde::{Deserialize, Serialize};

use super::nonlinear::{NonlinearConstant, SourceSign};
use super::solution::PerturbationSolution;
use crate::error::Result;

/// Accepted range of the error ratio under `ρ`-halving.
pub const ORDER_RATIO_RANGE: (f64, f64) = (5.5, 10.5);

/// Evidence for one candidate normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub constant: NonlinearConstant,
    pub sign: SourceSign,
    /// `ρ` values in decreasing order.
    pub rhos: Vec<f64>,
    /// Largest absolute error over the probes, per `ρ`.
    pub errors: Vec<f64>,
    /// `errors[i] / errors[i + 1]`.
    pub ratios: Vec<f64>,
    pub third_order: bool,
}

/// Outcome of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub rows: Vec<CandidateRow>,
    /// The unique third-order candidate, if there is exactly one.
    pub chosen: Option<(NonlinearConstant, SourceSign)>,
    pub passing: usize,
}

impl Adjudication {
    pub fn row(&self, constant: NonlinearConstant, sign: SourceSign) -> Option<&CandidateRow> {
        self.rows
            .iter()
            .find(|r| r.constant == constant && r.sign == sign)
    }
}

/// Compares all four candidates with `reference(ρ)`, which must return the
/// reference prices at `probes` (pairs `(X, t)`) for the given `ρ`.
pub fn adjudicate(
    solution: &PerturbationSolution,
    probes: &[(f64, f64)],
    rhos: &[f64],
    mut reference: impl FnMut(f64) -> Result<Vec<f64>>,
) -> Result<Adjudication> {
    let mut rhos = rhos.to_vec();
    rhos.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let refs: Vec<Vec<f64>> = rhos.iter().map(|&r| reference(r)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for constant in [NonlinearConstant::StrikeScaled, NonlinearConstant::Dimensionless] {
        for sign in [SourceSign::AsPrinted, SourceSign::Derived] {
            let candidate = solution.with_convention(constant, sign);
            let mut errors = Vec::with_capacity(rhos.len());
            for (rho, reference) in rhos.iter().zip(&refs) {
                let sol = candidate.with_rho(*rho);
                let mut worst = 0.0f64;
                for (&(x, t), r) in probes.iter().zip(reference) {
                    worst = worst.max((sol.price_discounted_direct(x, t)? - r).abs());
                }
                errors.push(worst);
            }
            let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
            let (lo, hi) = ORDER_RATIO_RANGE;
            let third_order = !ratios.is_empty() && ratios.iter().all(|r| (lo..=hi).contains(r));
            rows.push(CandidateRow {
                constant,
                sign,
                rhos: rhos.clone(),
                errors,
                ratios,
                third_order,
            });
        }
    }
    let passing = rows.iter().filter(|r| r.third_order).count();
    let chosen = if passing == 1 {
        rows.iter()
            .find(|r| r.third_order)
            .map(|r| (r.constant, r.sign))
    } else {
        None
    };
    Ok(Adjudication {
        rows,
        chosen,
        passing,
    })
}
