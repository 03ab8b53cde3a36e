//! Compressed sparse row matrices.
//!
//! Stored entries are kept verbatim: assembly may deliberately store
//! structural zeros (e.g. allocated but uncoupled stencil blocks), and nothing
//! here drops them. All kernels traverse rows in order and columns in
//! ascending index order, so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;

/// Sparse matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    /// Length `nrows + 1`; row `i` occupies `row_offsets[i]..row_offsets[i+1]`.
    pub row_offsets: Vec<usize>,
    /// Strictly increasing within each row.
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Wrap raw CSR arrays, checking every structural invariant.
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 {
            return Err(Error::Dimension(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                nrows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::Dimension(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::Dimension(
                "col_indices and values lengths differ".into(),
            ));
        }
        for i in 0..nrows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::Dimension(format!("row_offsets decrease at row {i}")));
            }
            for k in lo..hi {
                if col_indices[k] >= ncols {
                    return Err(Error::Dimension(format!(
                        "column index {} out of range in row {i}",
                        col_indices[k]
                    )));
                }
                if k > lo && col_indices[k] <= col_indices[k - 1] {
                    return Err(Error::Dimension(format!(
                        "column indices not strictly increasing in row {i}"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite value in sparse matrix".into()));
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Build from unordered `(row, col, value)` triplets. Duplicates are
    /// summed in sorted order; explicit zeros are kept.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut it = sorted.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for i in 0..nrows {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrix::new(nrows, ncols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// `y = A·x` into a caller-provided buffer (hot path; shapes asserted).
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv: x length");
        assert_eq!(y.len(), self.nrows, "spmv: y length");
        for i in 0..self.nrows {
            let (cols, vals) = (
                &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]],
                &self.values[self.row_offsets[i]..self.row_offsets[i + 1]],
            );
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[i] = acc;
        }
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "spmv: matrix is {}x{}, vector has length {}",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// Exact transpose via counting sort; deterministic entry order.
    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts;
        for i in 0..self.nrows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let c = self.col_indices[k];
                let slot = next[c];
                next[c] += 1;
                col_indices[slot] = i;
                values[slot] = self.values[k];
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Structural sparse product `self · other` (Gustavson's row-by-row
    /// scheme). For each output entry the contributions accumulate in
    /// ascending inner index, and each output row is emitted in ascending
    /// column order; nothing is thresholded away.
    pub fn sparse_product(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::Dimension(format!(
                "sparse_product: {}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();

        let mut acc = vec![0.0f64; other.ncols];
        let mut stamp = vec![usize::MAX; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[k];
                let aij = self.values[k];
                for kk in other.row_offsets[j]..other.row_offsets[j + 1] {
                    let c = other.col_indices[kk];
                    if stamp[c] != i {
                        stamp[c] = i;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += aij * other.values[kk];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_indices.push(c);
                values.push(acc[c]);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// `alpha·self + beta·other` with the union sparsity pattern.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<SparseMatrix> {
        if (self.nrows, self.ncols) != (other.nrows, other.ncols) {
            return Err(Error::Dimension(format!(
                "add_scaled: {}x{} plus {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0usize, 0usize);
            while p < ca.len() || q < cb.len() {
                let next = match (ca.get(p), cb.get(q)) {
                    (Some(&a), Some(&b)) if a == b => {
                        let e = (a, alpha * va[p] + beta * vb[q]);
                        p += 1;
                        q += 1;
                        e
                    }
                    (Some(&a), Some(&b)) if a < b => {
                        let e = (a, alpha * va[p]);
                        p += 1;
                        e
                    }
                    (Some(_), Some(&b)) => {
                        let e = (b, beta * vb[q]);
                        q += 1;
                        e
                    }
                    (Some(&a), None) => {
                        let e = (a, alpha * va[p]);
                        p += 1;
                        e
                    }
                    (None, Some(&b)) => {
                        let e = (b, beta * vb[q]);
                        q += 1;
                        e
                    }
                    (None, None) => unreachable!(),
                };
                col_indices.push(next.0);
                values.push(next.1);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// `self · B` for dense `B`, column by column.
    pub fn spmm_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.ncols != b.nrows {
            return Err(Error::Dimension(format!(
                "spmm_dense: {}x{} times {}x{}",
                self.nrows, self.ncols, b.nrows, b.ncols
            )));
        }
        let mut c = DenseMatrix::zeros(self.nrows, b.ncols);
        for j in 0..b.ncols {
            let src = &b.values[j * b.nrows..(j + 1) * b.nrows];
            let dst = &mut c.values[j * self.nrows..(j + 1) * self.nrows];
            self.spmv_into(src, dst);
        }
        Ok(c)
    }

    /// Main diagonal as a vector (zeros where no entry is stored).
    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for i in 0..d.len() {
            let (cols, vals) = self.row(i);
            if let Ok(k) = cols.binary_search(&i) {
                d[i] = vals[k];
            }
        }
        d
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m.set(i, c, v);
            }
        }
        m
    }

    /// Multiply every stored value by `s`.
    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// Entry lookup (zero if not stored); intended for tests and assembly
    /// checks, not inner loops.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }
}
