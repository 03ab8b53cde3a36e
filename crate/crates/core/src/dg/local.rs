//! Reference-interval operator tables and tensor-product helpers.
//!
//! Every local element matrix in this discretization is a tensor product of
//! `(p+1)×(p+1)` one-dimensional factors, so assembly reduces to building a
//! handful of 1D tables once and combining them per element.

use crate::linalg::DenseMatrix;

use super::basis::{gauss_legendre, gauss_lobatto, Lagrange};

/// 1D reference tables for the degree-`p` Lobatto nodal basis, integrated
/// with `p+1`-point Gauss–Legendre quadrature (exact for every table here).
#[derive(Debug, Clone)]
pub struct AxisTables {
    pub basis: Lagrange,
    /// `mass[i][j] = ∫ ℓ_i ℓ_j` on `[-1, 1]`.
    pub mass: DenseMatrix,
    /// `stiff[i][j] = ∫ ℓ_i' ℓ_j'`.
    pub stiff: DenseMatrix,
    /// `conv[i][j] = ∫ ℓ_j' ℓ_i` — derivative on the trial (column) index.
    pub conv: DenseMatrix,
    /// Basis values at the endpoints: `trace_lo[i] = ℓ_i(-1)`, `trace_hi[i] = ℓ_i(+1)`.
    pub trace_lo: Vec<f64>,
    pub trace_hi: Vec<f64>,
    /// Basis derivatives at the endpoints, reference scale.
    pub dtrace_lo: Vec<f64>,
    pub dtrace_hi: Vec<f64>,
}

impl AxisTables {
    pub fn new(degree: usize) -> Self {
        let basis = Lagrange::new(gauss_lobatto(degree));
        let n = basis.len();
        let (qx, qw) = gauss_legendre(degree + 1);
        let vals = DenseMatrix::from_fn(n, qx.len(), |i, q| basis.value(i, qx[q]));
        let ders = DenseMatrix::from_fn(n, qx.len(), |i, q| basis.deriv(i, qx[q]));
        let quad = |fa: &DenseMatrix, fb: &DenseMatrix| {
            DenseMatrix::from_fn(n, n, |i, j| {
                (0..qx.len()).map(|q| qw[q] * fa.get(i, q) * fb.get(j, q)).sum()
            })
        };
        let mass = quad(&vals, &vals);
        let stiff = quad(&ders, &ders);
        // conv[i][j] = ∫ ℓ_j' ℓ_i
        let conv = DenseMatrix::from_fn(n, n, |i, j| {
            (0..qx.len()).map(|q| qw[q] * vals.get(i, q) * ders.get(j, q)).sum()
        });
        AxisTables {
            mass,
            stiff,
            conv,
            trace_lo: (0..n).map(|i| basis.value(i, -1.0)).collect(),
            trace_hi: (0..n).map(|i| basis.value(i, 1.0)).collect(),
            dtrace_lo: (0..n).map(|i| basis.deriv(i, -1.0)).collect(),
            dtrace_hi: (0..n).map(|i| basis.deriv(i, 1.0)).collect(),
            basis,
        }
    }
}

/// Tensor product of `d` square per-axis factors into one `np×np` local
/// block. Local dof `i` decomposes as `i = Σ_a i_a · (p+1)^a` (axis 0
/// fastest), and the block entry is `Π_a factors[a][i_a][j_a]`.
pub fn tensor_block(factors: &[&DenseMatrix]) -> DenseMatrix {
    let d = factors.len();
    let mut strides = vec![1usize; d];
    for a in 1..d {
        strides[a] = strides[a - 1] * factors[a - 1].nrows;
    }
    let np = strides[d - 1] * factors[d - 1].nrows;
    DenseMatrix::from_fn(np, np, |i, j| {
        let mut v = 1.0;
        for a in 0..d {
            let ia = (i / strides[a]) % factors[a].nrows;
            let ja = (j / strides[a]) % factors[a].nrows;
            v *= factors[a].get(ia, ja);
        }
        v
    })
}

/// Rank-one matrix `u vᵀ`.
pub fn outer(u: &[f64], v: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
}
