//! Singular value decomposition by one-sided Jacobi rotations.
//!
//! The factorization always runs on the side with fewer columns (working on
//! the transpose when `nrows < ncols`), i.e. on the smaller Gram dimension.
//! That keeps the rotation accumulation small for the wide/tall candidate
//! blocks this solver produces, and one-sided Jacobi computes even tiny
//! singular values to high relative accuracy — which matters because rank
//! decisions downstream hinge on σ ratios.

use crate::error::{Error, Result};
use crate::linalg::dense::{dot, norm2, DenseMatrix};

/// Thin SVD `M = U·diag(sigma)·Vᵀ` with `k = min(nrows, ncols)` columns.
///
/// `sigma` is nonincreasing and nonnegative. Columns of `U` beyond the exact
/// rank are completed deterministically from coordinate vectors so `UᵀU = I`
/// still holds. Sign convention: the largest-magnitude entry of each column
/// of `U` (first one on ties) is nonnegative.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

const MAX_SWEEPS: usize = 60;

/// Decompose `m`; errors only if the rotation sweeps fail to converge.
pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("svd: non-finite entry".into()));
    }
    let mut out = if m.nrows >= m.ncols {
        svd_tall(m)?
    } else {
        // M = (Mᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let t = svd_tall(&m.transpose())?;
        Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    };
    apply_sign_convention(&mut out);
    Ok(out)
}

/// One-sided Jacobi for `nrows >= ncols`: orthogonalize the columns of a
/// working copy `W = M·V` by plane rotations; at convergence the column norms
/// are the singular values and `U = W·diag(1/σ)`.
fn svd_tall(m: &DenseMatrix) -> Result<Svd> {
    let (nr, nc) = (m.nrows, m.ncols);
    let mut w = m.clone();
    let mut v = DenseMatrix::identity(nc);

    // Columns count as orthogonal once |⟨w_p,w_q⟩| sinks to the rounding
    // floor of the dot product itself, which grows with the summation
    // length: for nearly parallel columns the cancellation noise is about
    // nr·ε relative to ‖w_p‖‖w_q‖, so demanding more would chatter forever.
    let orth_tol = (nr as f64 * f64::EPSILON).max(1e-15);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..nc {
            for q in p + 1..nc {
                let (wp, wq) = (w.col(p), w.col(q));
                let app = dot(wp, wp);
                let aqq = dot(wq, wq);
                let apq = dot(wp, wq);
                if apq.abs() <= orth_tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                // A non-orthogonal partner whose norm sits below the other
                // column's roundoff floor is a bit-parallel remnant: the
                // rotation would shrink it again without ever tilting it, so
                // the sweeps would chatter forever. Flush it to exact zero —
                // the null completion below restores orthonormality.
                let deflate = f64::EPSILON * f64::EPSILON;
                if aqq <= deflate * app || app <= deflate * aqq {
                    let dead = if app >= aqq { q } else { p };
                    for x in w.col_mut(dead) {
                        *x = 0.0;
                    }
                    rotated = true;
                    continue;
                }
                rotated = true;
                // standard Jacobi rotation zeroing the (p,q) Gram entry
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "svd did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    // singular values = column norms, sorted nonincreasing (stable on ties)
    let mut order: Vec<usize> = (0..nc).collect();
    let norms: Vec<f64> = (0..nc).map(|j| norm2(w.col(j))).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let mut u = DenseMatrix::zeros(nr, nc);
    let mut vv = DenseMatrix::zeros(nc, nc);
    let mut sigma = Vec::with_capacity(nc);
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > 0.0 {
            let src = w.col(j);
            let dst = u.col_mut(slot);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = x / s;
            }
        }
        vv.col_mut(slot).copy_from_slice(v.col(j));
    }
    complete_null_columns(&mut u, &sigma);
    Ok(Svd { u, sigma, v: vv })
}

#[inline]
fn rotate_cols(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let nr = m.nrows;
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    let (head, tail) = m.values.split_at_mut(hi * nr);
    let colp = &mut head[lo * nr..lo * nr + nr];
    let colq = &mut tail[..nr];
    // (p, q) may have been swapped into (lo, hi); rotation is symmetric in
    // labeling as long as the same (c, s) acts on the same columns
    let (cp, cq) = if p == lo { (colp, colq) } else { (colq, colp) };
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Replace zero columns of `U` (exact rank deficiency) with coordinate
/// vectors orthogonalized against the existing columns, scanning `e_0, e_1,
/// ...` in order so the completion is deterministic.
fn complete_null_columns(u: &mut DenseMatrix, sigma: &[f64]) {
    let nr = u.nrows;
    for j in 0..sigma.len() {
        if sigma[j] > 0.0 {
            continue;
        }
        'candidates: for axis in 0..nr {
            let mut cand = vec![0.0; nr];
            cand[axis] = 1.0;
            // two rounds of classical Gram-Schmidt against the filled columns
            for _ in 0..2 {
                for k in 0..sigma.len() {
                    if k == j || (sigma[k] == 0.0 && k > j) {
                        continue;
                    }
                    let proj = dot(&cand, u.col(k));
                    for (ci, &uk) in cand.iter_mut().zip(u.col(k)) {
                        *ci -= proj * uk;
                    }
                }
            }
            let n = norm2(&cand);
            if n > 1e-8 {
                for c in cand.iter_mut() {
                    *c /= n;
                }
                u.col_mut(j).copy_from_slice(&cand);
                break 'candidates;
            }
        }
    }
}

fn apply_sign_convention(svd: &mut Svd) {
    for j in 0..svd.sigma.len() {
        let col = svd.u.col(j);
        let mut best = 0usize;
        let mut best_abs = col[0].abs();
        for (i, &x) in col.iter().enumerate().skip(1) {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            for x in svd.u.col_mut(j) {
                *x = -*x;
            }
            for x in svd.v.col_mut(j) {
                *x = -*x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(s: &Svd) -> DenseMatrix {
        let k = s.sigma.len();
        let mut us = s.u.clone();
        for j in 0..k {
            for x in us.col_mut(j) {
                *x *= s.sigma[j];
            }
        }
        us.matmul(&s.v.transpose()).unwrap()
    }

    fn orthonormality_defect(m: &DenseMatrix) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        g.max_abs_diff(&DenseMatrix::identity(m.ncols))
    }

    #[test]
    fn identity_has_unit_sigma() {
        let s = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_sigma_sorted_and_signed() {
        let m = DenseMatrix::from_rows(&[
            &[3.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0],
            &[0.0, 0.0, 1.0],
        ]);
        let s = svd(&m).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        // U and V are the same signed permutation of I; with positive data the
        // sign convention forces exactly I here
        assert!(s.u.max_abs_diff(&DenseMatrix::identity(3)) <= 1e-15);
        assert!(s.v.max_abs_diff(&DenseMatrix::identity(3)) <= 1e-15);
        assert!(reconstruct(&s).max_abs_diff(&m) <= 1e-14);
    }

    /// Two-sided Jacobi eigenvalue oracle for symmetric matrices, independent
    /// of the one-sided SVD path.
    fn jacobi_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
        let n = a.nrows;
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    off = off.max(m.get(i, j).abs());
                }
            }
            if off <= 1e-14 * m.max_abs().max(1.0) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m.get(p, q);
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..n {
                        let akp = m.get(k, p);
                        let akq = m.get(k, q);
                        m.set(k, p, c * akp - s * akq);
                        m.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = m.get(p, k);
                        let aqk = m.get(q, k);
                        m.set(p, k, c * apk - s * aqk);
                        m.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }

    #[test]
    fn random_6x4_reconstruction_and_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = DenseMatrix::from_fn(6, 4, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let s = svd(&m).unwrap();
        assert!(reconstruct(&s).max_abs_diff(&m) <= 1e-12);
        assert!(orthonormality_defect(&s.u) <= 1e-12);
        assert!(orthonormality_defect(&s.v) <= 1e-12);
        // sigma^2 against eigenvalues of MᵀM from the independent oracle
        let gram = m.transpose().matmul(&m).unwrap();
        let eig = jacobi_eigenvalues(&gram);
        for (sig, lam) in s.sigma.iter().zip(&eig) {
            assert!((sig * sig - lam).abs() <= 1e-10 * lam.max(1.0), "{sig} vs sqrt({lam})");
        }
        // sign convention: largest-magnitude entry of each U column positive
        for j in 0..s.sigma.len() {
            let col = s.u.col(j);
            let mut best = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            assert!(col[best] >= 0.0);
        }
    }

    #[test]
    fn wide_matrix_runs_on_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let m = DenseMatrix::from_fn(4, 9, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let s = svd(&m).unwrap();
        assert_eq!(s.sigma.len(), 4);
        assert_eq!((s.u.nrows, s.u.ncols), (4, 4));
        assert_eq!((s.v.nrows, s.v.ncols), (9, 4));
        assert!(reconstruct(&s).max_abs_diff(&m) <= 1e-12);
        assert!(orthonormality_defect(&s.u) <= 1e-12);
        assert!(orthonormality_defect(&s.v) <= 1e-12);
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        // rank-1 matrix: 3 columns, one independent direction
        let m = DenseMatrix::from_rows(&[
            &[1.0, 2.0, 3.0],
            &[2.0, 4.0, 6.0],
            &[-1.0, -2.0, -3.0],
            &[0.5, 1.0, 1.5],
        ]);
        let s = svd(&m).unwrap();
        assert!(s.sigma[1] <= 1e-12 * s.sigma[0]);
        assert!(orthonormality_defect(&s.u) <= 1e-12);
        assert!(reconstruct(&s).max_abs_diff(&m) <= 1e-12);
    }
}
