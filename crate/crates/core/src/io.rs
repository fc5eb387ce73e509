//! Headerless numeric CSV matrices.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::CountMatrix;

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a T×A count matrix; rejects negative or non-integer cells by
/// position (zero-based row and column).
pub fn read_count_csv(path: &Path) -> Result<CountMatrix> {
    let mut rows = Vec::new();
    for (r, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        let mut row = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: i64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("{}: non-integer count {cell:?} at row {r}, column {c}", path.display())))?;
            row.push(v);
        }
        rows.push(row);
    }
    CountMatrix::from_rows(&rows).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_count_csv(y: &CountMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in 0..y.time_steps() {
        let line: Vec<String> = (0..y.areas()).map(|i| y.get(t, i).to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..m.nrows() {
        let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (r, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        if *ncols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Data(format!("{}: ragged row {r}", path.display())));
        }
        for (c, cell) in rec.iter().enumerate() {
            data.push(
                cell.parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: bad number {cell:?} at row {r}, column {c}", path.display())))?,
            );
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols.unwrap_or(0), &data))
}
