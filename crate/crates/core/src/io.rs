//! CSV import/export helpers.
//!
//! Numbers are written in the shortest decimal form that round-trips to the
//! same f64 ('.' separator, '\n' line endings), so re-importing a file
//! reproduces the in-memory values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Shortest round-trip decimal form of an f64.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

pub fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

/// Writes one value per line.
pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for x in v.iter() {
        writeln!(out, "{}", format_float(*x))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let mut values = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        values.push(parse_float(trimmed)?);
    }
    if values.is_empty() {
        return Err(Error::Parse(format!("{} holds no values", path.display())));
    }
    Ok(DVector::from_vec(values))
}

/// Writes a rectangular table with a header row.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|x| format_float(*x)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back a table written by [`write_table_csv`]; returns the header and
/// the rows.
pub fn read_table_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{} is empty", path.display())))??
        .split(',')
        .map(str::to_owned)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line.split(',').map(parse_float).collect();
        let row = row?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "row with {} cells under a {}-column header",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}
