//! CSV persistence for deflators, term structures and intensities.
//!
//! Schemas: deflators `t,value`; term structures `t,s,value`; intensities
//! `h,value`. Every file carries a header row and is written back in the same
//! schema it is read from.

use std::io::{Read, Write};

use super::{CashflowIntensity, Gauge, TimeGrid, SPACING_RTOL};
use crate::error::{Error, Result};

fn uniform_step(nodes: &[f64], what: &str) -> Result<f64> {
    if nodes.len() < 2 {
        return Ok(1.0);
    }
    let step = nodes[1] - nodes[0];
    if !(step > 0.0) {
        return Err(Error::Grid(format!("{what} nodes must increase")));
    }
    for w in nodes.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-7 * step.max(SPACING_RTOL) {
            return Err(Error::Grid(format!("{what} nodes are not uniformly spaced")));
        }
    }
    Ok(step)
}

fn read_rows<R: Read, const C: usize>(reader: R) -> Result<Vec<[f64; C]>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != C {
            return Err(Error::Shape(format!(
                "expected {C} columns, found {}",
                record.len()
            )));
        }
        let mut row = [0.0; C];
        for (slot, field) in row.iter_mut().zip(record.iter()) {
            *slot = field
                .parse()
                .map_err(|_| Error::InvalidInput(format!("not a number: {field:?}")))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads `t,value` rows into a uniform grid and deflator samples.
pub fn read_deflator_csv<R: Read>(reader: R) -> Result<(TimeGrid, Vec<f64>)> {
    let rows = read_rows::<_, 2>(reader)?;
    if rows.is_empty() {
        return Err(Error::Grid("empty deflator file".into()));
    }
    let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let step = uniform_step(&t, "deflator time")?;
    let grid = TimeGrid::new(t[0], step, t.len())?;
    Ok((grid, rows.iter().map(|r| r[1]).collect()))
}

/// Reads `t,s,value` rows, grouped by valuation time in increasing `s`, and
/// pairs them with a deflator to form a [`Gauge`].
pub fn read_term_structure_csv<R: Read>(
    reader: R,
    times: TimeGrid,
    deflator: Vec<f64>,
) -> Result<Gauge> {
    let rows = read_rows::<_, 3>(reader)?;
    let mut term: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
    let mut offsets: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
    for [t, s, p] in rows {
        let i = ((t - times.start()) / times.step()).round();
        if i < 0.0 || i as usize >= times.len() || (times.at(i as usize) - t).abs() > 1e-7 * times.step() {
            return Err(Error::GridIncompatible(format!(
                "term-structure valuation time {t} is not on the deflator grid"
            )));
        }
        term[i as usize].push(p);
        offsets[i as usize].push(s - t);
    }
    let ds = uniform_step(&offsets[0], "maturity offset")?;
    for (i, off) in offsets.iter().enumerate() {
        if off.len() != offsets[0].len()
            || off
                .iter()
                .zip(&offsets[0])
                .any(|(a, b)| (a - b).abs() > 1e-7 * ds)
        {
            return Err(Error::GridIncompatible(format!(
                "maturity offsets at t = {} differ from the first valuation time",
                times.at(i)
            )));
        }
    }
    if offsets[0].first().is_none_or(|o| o.abs() > 1e-9) {
        return Err(Error::Grid("term structure must start at s = t".into()));
    }
    Gauge::new(times, deflator, ds, term)
}

/// Reads `h,value` rows.
pub fn read_intensity_csv<R: Read>(reader: R) -> Result<CashflowIntensity> {
    let rows = read_rows::<_, 2>(reader)?;
    if rows.is_empty() {
        return Err(Error::Grid("empty intensity file".into()));
    }
    let h: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    if h[0].abs() > 1e-12 {
        return Err(Error::Grid("intensity samples must start at h = 0".into()));
    }
    let dh = uniform_step(&h, "intensity")?;
    CashflowIntensity::new(dh, rows.iter().map(|r| r[1]).collect())
}

pub fn write_deflator_csv<W: Write>(writer: W, gauge: &Gauge) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "value"])?;
    for (t, d) in gauge.times().nodes().zip(gauge.deflator()) {
        w.write_record([t.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_term_structure_csv<W: Write>(writer: W, gauge: &Gauge) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "s", "value"])?;
    for (t, row) in gauge.times().nodes().zip(gauge.term_structure()) {
        for (j, p) in row.iter().enumerate() {
            let s = t + j as f64 * gauge.maturity_step();
            w.write_record([t.to_string(), s.to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_intensity_csv<W: Write>(writer: W, pi: &CashflowIntensity) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["h", "value"])?;
    for (k, v) in pi.samples().iter().enumerate() {
        w.write_record([(k as f64 * pi.dh()).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
