//! Ensemble persistence.
//!
//! Binary layout (all little-endian): magic `GATE`, format version `u32`,
//! then `u64` path count `M`, asset count `N`, factor count `K`, step count,
//! `f64` step `dt` and `u64` seed, followed by the `Ŝ` samples
//! (`M × (steps+1) × N` `f64`, path-major) and the `W` samples
//! (`M × (steps+1) × K`). A CSV export with one row per path and time is
//! provided for small runs.

use std::io::{Read, Write};

use super::{PathArray, PathEnsemble};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GATE";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 8 + 8 + 8;

/// Writes the binary ensemble file.
pub fn write_ensemble<W: Write>(mut w: W, e: &PathEnsemble) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [e.paths(), e.assets(), e.factors(), e.steps()] {
        header.extend_from_slice(&(v as u64).to_le_bytes());
    }
    header.extend_from_slice(&e.dt.to_le_bytes());
    header.extend_from_slice(&e.seed.to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in e.s.data().chunks(4096).chain(e.w.data().chunks(4096)) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("eight bytes"))
}

fn read_block<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; count * 8];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("truncated sample block: {e}")))?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect())
}

/// Reads a binary ensemble file written by [`write_ensemble`].
pub fn read_ensemble<R: Read>(mut r: R) -> Result<PathEnsemble> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if header[..4] != MAGIC {
        return Err(Error::Format("missing GATE magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let dims: Vec<usize> = (0..4).map(|i| read_u64(&header, 8 + 8 * i) as usize).collect();
    let (m, n, k, steps) = (dims[0], dims[1], dims[2], dims[3]);
    let dt = f64::from_le_bytes(header[40..48].try_into().expect("eight bytes"));
    let seed = read_u64(&header, 48);
    if m == 0 || n == 0 || k == 0 || steps == 0 || !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Format(format!(
            "implausible header: M={m} N={n} K={k} steps={steps} dt={dt}"
        )));
    }
    let len = steps + 1;
    let s_count = m
        .checked_mul(len)
        .and_then(|v| v.checked_mul(n))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let w_count = m
        .checked_mul(len)
        .and_then(|v| v.checked_mul(k))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let s = PathArray::from_vec(m, len, n, read_block(&mut r, s_count)?)?;
    let w = PathArray::from_vec(m, len, k, read_block(&mut r, w_count)?)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after sample blocks".into()));
    }
    Ok(PathEnsemble { s, w, dt, seed })
}

/// CSV export: `path,step,t,S1..SN,W1..WK`.
pub fn write_ensemble_csv<W: Write>(writer: W, e: &PathEnsemble) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["path".to_string(), "step".into(), "t".into()];
    header.extend((1..=e.assets()).map(|j| format!("S{j}")));
    header.extend((1..=e.factors()).map(|j| format!("W{j}")));
    w.write_record(&header)?;
    for p in 0..e.paths() {
        for i in 0..e.s.len() {
            let mut row = vec![p.to_string(), i.to_string(), e.time(i).to_string()];
            row.extend(e.s.state(p, i).iter().map(|v| v.to_string()));
            row.extend(e.w.state(p, i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
