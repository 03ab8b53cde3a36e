//! Dense LU factorization with partial pivoting.

use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;

/// LU factors of a square matrix, `P·M = L·U`, stored packed in `lu` with the
/// row permutation in `perm` (`perm[i]` = original row now in position `i`).
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl DenseLu {
    /// Factor `m`. Pivot ties break toward the smaller row index so the
    /// factorization is deterministic; an exactly zero pivot column reports a
    /// singular matrix.
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Dimension(format!(
                "lu: matrix is {}x{}, must be square",
                m.nrows, m.ncols
            )));
        }
        let n = m.nrows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            // partial pivot: first strictly-largest |entry| at or below the diagonal
            let mut piv = k;
            let mut piv_abs = lu.get(k, k).abs();
            for i in k + 1..n {
                let a = lu.get(i, k).abs();
                if a > piv_abs {
                    piv_abs = a;
                    piv = i;
                }
            }
            if piv_abs == 0.0 {
                return Err(Error::Numerical(format!("singular matrix: zero pivot at column {k}")));
            }
            if piv != k {
                perm.swap(k, piv);
                for j in 0..n {
                    let a = lu.get(k, j);
                    let b = lu.get(piv, j);
                    lu.set(k, j, b);
                    lu.set(piv, j, a);
                }
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let factor = lu.get(i, k) / pivot;
                lu.set(i, k, factor);
                if factor == 0.0 {
                    continue;
                }
                for j in k + 1..n {
                    let v = lu.get(i, j) - factor * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(DenseLu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows
    }

    /// Solve `M·x = b` in place (`b` becomes `x`).
    pub fn solve_into(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n, "lu solve: rhs length");
        // apply permutation
        let mut x: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        // forward substitution (unit lower)
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_into(&mut x);
        x
    }

    /// Solve for every column of `b` in place.
    pub fn solve_matrix_into(&self, b: &mut DenseMatrix) {
        assert_eq!(b.nrows, self.dim(), "lu solve: rhs rows");
        for j in 0..b.ncols {
            self.solve_into(b.col_mut(j));
        }
    }
}

/// One-shot convenience: factor `m` and solve `m·x = b`.
pub fn dense_lu_solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if m.nrows != b.len() {
        return Err(Error::Dimension(format!(
            "dense_lu_solve: matrix is {}x{}, rhs has length {}",
            m.nrows,
            m.ncols,
            b.len()
        )));
    }
    Ok(DenseLu::factor(m)?.solve(b))
}
