//! Binary field dumps and CSV artifacts.
//!
//! Noise dumps: 32-byte header (magic `CWT2NOIS`, N as u64, L, dt — all
//! little-endian) followed by N^3 f64 values, row-major with z fastest.
//! Snapshots use the same layout with magic `CWT2SNAP` plus an f64 time
//! field between header and data.
//!
//! CSV artifacts begin with a single '#'-prefixed JSON line carrying the
//! full configuration and its hash, so every file is self-describing.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, PeriodicGrid};
use std::io::{Read, Write};
use std::path::Path;

pub const NOISE_MAGIC: &[u8; 8] = b"CWT2NOIS";
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CWT2SNAP";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpHeader {
    pub points_per_axis: u64,
    pub box_length: f64,
    pub dt: f64,
}

fn write_header(out: &mut impl Write, magic: &[u8; 8], grid: &PeriodicGrid) -> Result<()> {
    out.write_all(magic)?;
    out.write_all(&(grid.points_per_axis as u64).to_le_bytes())?;
    out.write_all(&grid.box_length.to_le_bytes())?;
    out.write_all(&grid.dt.to_le_bytes())?;
    Ok(())
}

fn read_header(data: &mut impl Read, magic: &[u8; 8]) -> Result<DumpHeader> {
    let mut buf8 = [0u8; 8];
    data.read_exact(&mut buf8)?;
    if &buf8 != magic {
        return Err(Error::Config(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf8),
            String::from_utf8_lossy(magic)
        )));
    }
    data.read_exact(&mut buf8)?;
    let points_per_axis = u64::from_le_bytes(buf8);
    data.read_exact(&mut buf8)?;
    let box_length = f64::from_le_bytes(buf8);
    data.read_exact(&mut buf8)?;
    let dt = f64::from_le_bytes(buf8);
    Ok(DumpHeader { points_per_axis, box_length, dt })
}

fn write_values(out: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

fn read_values(data: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    data.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Write one noise slab.
pub fn write_noise_dump(path: &Path, grid: &PeriodicGrid, slab: &GridFunction) -> Result<()> {
    slab.check_len(grid)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, NOISE_MAGIC, grid)?;
    write_values(&mut out, slab.values())?;
    out.flush()?;
    Ok(())
}

pub fn read_noise_dump(path: &Path) -> Result<(DumpHeader, Vec<f64>)> {
    let mut data = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut data, NOISE_MAGIC)?;
    let n = header.points_per_axis as usize;
    let values = read_values(&mut data, n * n * n)?;
    Ok((header, values))
}

/// Write a field snapshot at time t.
pub fn write_snapshot(path: &Path, grid: &PeriodicGrid, t: f64, field: &GridFunction) -> Result<()> {
    field.check_len(grid)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut out, SNAPSHOT_MAGIC, grid)?;
    out.write_all(&t.to_le_bytes())?;
    write_values(&mut out, field.values())?;
    out.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(DumpHeader, f64, Vec<f64>)> {
    let mut data = std::io::BufReader::new(std::fs::File::open(path)?);
    let header = read_header(&mut data, SNAPSHOT_MAGIC)?;
    let mut buf8 = [0u8; 8];
    data.read_exact(&mut buf8)?;
    let t = f64::from_le_bytes(buf8);
    let n = header.points_per_axis as usize;
    let values = read_values(&mut data, n * n * n)?;
    Ok((header, t, values))
}

/// Format a float for CSV output (shortest round-trip representation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write a CSV artifact with the self-describing header line.
pub fn write_csv_artifact(
    path: &Path,
    config: &ExperimentConfig,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let header = serde_json::json!({
        "config": config,
        "hash": config.hash(),
    });
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# {header}")?;
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::Config(format!(
                "row width {} does not match {} columns",
                row.len(),
                columns.len()
            )));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
