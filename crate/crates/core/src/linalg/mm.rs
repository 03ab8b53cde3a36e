//! MatrixMarket coordinate I/O and plain-text vector I/O.
//!
//! Values are written with Rust's shortest round-trip formatting, so
//! write-then-read reproduces a matrix bit for bit. Stored zeros are written
//! like any other entry — the on-disk nnz is the stored nnz.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::sparse::SparseMatrix;

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Write `a` in MatrixMarket coordinate format (1-based indices, row-major
/// entry order).
pub fn write_matrix_market<W: Write>(w: &mut W, a: &SparseMatrix) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(w, "{} {} {}", a.nrows, a.ncols, a.nnz())?;
    for i in 0..a.nrows {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(w, "{} {} {}", i + 1, c + 1, v)?;
        }
    }
    Ok(())
}

/// Read a MatrixMarket coordinate file written by [`write_matrix_market`] or
/// any tool emitting `real general` coordinate data. Comment lines (`%`) and
/// blank lines are skipped; duplicate entries are summed.
pub fn read_matrix_market<R: BufRead>(r: &mut R) -> Result<SparseMatrix> {
    let mut lines = r.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::Parse("empty MatrixMarket file".into())),
    };
    let head = first.trim().to_ascii_lowercase();
    if !head.starts_with("%%matrixmarket") {
        return Err(Error::Parse("missing %%MatrixMarket header".into()));
    }
    for required in ["matrix", "coordinate", "real", "general"] {
        if !head.split_whitespace().any(|t| t == required) {
            return Err(Error::Parse(format!(
                "unsupported MatrixMarket flavor (need `{required}`): {first}"
            )));
        }
    }

    let mut size_line: Option<String> = None;
    for line in lines.by_ref() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some(t.to_string());
        break;
    }
    let size_line = size_line.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad size line: {size_line}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse(format!("size line needs 3 fields: {size_line}")));
    }
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);

    let mut triplets = Vec::with_capacity(nnz);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        let (i, j, v) = match (it.next(), it.next(), it.next()) {
            (Some(i), Some(j), Some(v)) => (i, j, v),
            _ => return Err(Error::Parse(format!("bad entry line: {t}"))),
        };
        let i: usize = i.parse().map_err(|_| Error::Parse(format!("bad row index: {t}")))?;
        let j: usize = j.parse().map_err(|_| Error::Parse(format!("bad column index: {t}")))?;
        let v: f64 = v.parse().map_err(|_| Error::Parse(format!("bad value: {t}")))?;
        if i == 0 || j == 0 || i > nrows || j > ncols {
            return Err(Error::Parse(format!(
                "entry ({i}, {j}) outside 1..={nrows} x 1..={ncols}"
            )));
        }
        triplets.push((i - 1, j - 1, v));
    }
    if triplets.len() != nnz {
        return Err(Error::Parse(format!(
            "header promises {nnz} entries, file has {}",
            triplets.len()
        )));
    }
    SparseMatrix::from_triplets(nrows, ncols, &triplets)
}

/// Write a vector as plain text, one value per line.
pub fn write_vector<W: Write>(w: &mut W, x: &[f64]) -> Result<()> {
    for v in x {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

/// Read a plain-text vector (one value per line; blank lines and `#` or `%`
/// comments are skipped).
pub fn read_vector<R: BufRead>(r: &mut R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        out.push(
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad vector entry: {t}")))?,
        );
    }
    Ok(out)
}
