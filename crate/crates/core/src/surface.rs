//! Price surfaces `Φ(t, X)` shared by the perturbation and finite-difference
//! solvers, with a common CSV schema `t,X,Phi`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One sampled price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub t: f64,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Phi")]
    pub phi: f64,
}

/// Prices on a rectangular `(t, X)` lattice, stored time-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceSurface {
    pub points: Vec<SurfacePoint>,
}

impl PriceSurface {
    /// Tabulates `price(t, x)` over the lattice `ts × xs`.
    pub fn tabulate(
        ts: &[f64],
        xs: &[f64],
        mut price: impl FnMut(f64, f64) -> Result<f64>,
    ) -> Result<Self> {
        let mut points = Vec::with_capacity(ts.len() * xs.len());
        for &t in ts {
            for &x in xs {
                points.push(SurfacePoint { t, x, phi: price(t, x)? });
            }
        }
        Ok(Self { points })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let points = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { points })
    }

    /// Largest absolute difference against another surface on the same
    /// lattice; `None` when the lattices differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.points.len() != other.points.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.points.iter().zip(&other.points) {
            if a.t != b.t || a.x != b.x {
                return None;
            }
            worst = worst.max((a.phi - b.phi).abs());
        }
        Some(worst)
    }
}
