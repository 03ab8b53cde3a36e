//! Adaptive damped smoothers: Richardson, block Jacobi and block
//! Gauss-Seidel relaxation with power-iteration damping.
//!
//! A smoother is the preconditioned Richardson iteration
//!
//! ```text
//!     x ← x + ω P(A)⁻¹ (b − A x)
//! ```
//!
//! where `P(A)` is the identity (Richardson), the block diagonal of `A`
//! (block Jacobi) or its lower block triangle (block Gauss-Seidel). The
//! damping factor is chosen adaptively as `ω = (4/3)/ρ̃` from a power-method
//! estimate `ρ̃ ≈ ρ(P(A)⁻¹A)`, which reproduces the classical `ω = 2/3`
//! damped Jacobi on model Laplacians and keeps the smoothing property on
//! operators whose scale is not known in advance.
//!
//! The same module provides the prolongator smoothing step
//! `T = (I − ω P(A)⁻¹ A) · P` used when building coarse spaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{norm2, BlockDiagonalLu, BlockPartition, SparseMatrix};

/// Power-iteration step count used when calibrating damping factors.
pub const POWER_ITERATIONS: usize = 3;

/// Default relative-change tolerance for the stagnation stop rule.
pub const STAGNATION_GAMMA: f64 = 0.03;

/// Hard cap on stagnation-controlled sweeps, so the rule always terminates.
pub const STAGNATION_CAP: usize = 100;

/// Which preconditioner `P(A)` drives the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmootherKind {
    /// `P(A) = I`.
    Richardson,
    /// `P(A) = D`, the block diagonal of `A`.
    BlockJacobi,
    /// `P(A) = D + L`, the lower block triangle of `A`.
    BlockGaussSeidel,
}

/// Termination rule for [`smooth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run exactly this many sweeps.
    FixedCount(usize),
    /// Sweep until the norm decay stagnates: stop once the ratio of the
    /// previous iterate norm to the current one drops below `1 + γ`, with a
    /// hard cap of [`STAGNATION_CAP`] sweeps. Intended for homogeneous
    /// systems (`b = 0`), where the iterate is additionally renormalized to
    /// unit length after every sweep (the ratio is recorded first).
    Stagnation(f64),
}

/// A calibrated smoother: the preconditioner kind, its damping factor and
/// the factored diagonal blocks needed to apply `P(A)⁻¹`.
///
/// The factorization is taken from the matrix the smoother was built on;
/// applying it to a different matrix of the same dimensions is undetected
/// misuse.
#[derive(Debug, Clone)]
pub struct SmootherSpec {
    pub kind: SmootherKind,
    /// Damping factor `ω`; finite and nonnegative (calibration always
    /// produces a positive value, `ω = 0` is allowed only as the explicit
    /// "no smoothing" edge of [`apply_prolongation_smoothing`]).
    pub omega: f64,
    /// The spectral-radius estimate `ρ̃` behind `omega` (zero when the
    /// smoother was assembled with a manual damping factor).
    pub rho_estimate: f64,
    blocks: BlockPartition,
    diag: Option<BlockDiagonalLu>,
}

impl SmootherSpec {
    /// Assemble a smoother with an explicitly chosen damping factor,
    /// factoring the diagonal blocks of `a`. Richardson ignores `blocks`.
    pub fn assemble(
        a: &SparseMatrix,
        kind: SmootherKind,
        omega: f64,
        rho_estimate: f64,
        blocks: BlockPartition,
    ) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Dimension("smoother: matrix must be square".into()));
        }
        if !omega.is_finite() || omega < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "smoother damping factor must be finite and nonnegative, got {omega}"
            )));
        }
        let diag = match kind {
            SmootherKind::Richardson => None,
            _ => Some(BlockDiagonalLu::factor(a, &blocks)?),
        };
        Ok(SmootherSpec {
            kind,
            omega,
            rho_estimate,
            blocks,
            diag,
        })
    }

    pub fn blocks(&self) -> &BlockPartition {
        &self.blocks
    }

    /// Dimension of the operator the smoother was factored from; Richardson
    /// smoothers report the partition's extent.
    pub fn dim(&self) -> usize {
        match &self.diag {
            Some(lu) => lu.dim(),
            None => self.blocks.dim(),
        }
    }

    /// `z = P(A)⁻¹ r`. `a` supplies the off-diagonal couplings for the
    /// Gauss-Seidel substitution; Jacobi and Richardson ignore it.
    fn apply_prec_into(&self, a: &SparseMatrix, r: &[f64], z: &mut [f64]) {
        precond_apply_into(self.kind, self.diag.as_ref(), Some(a), r, z);
    }

    /// `z = P(A)⁻¹ r` for relaxation driven from outside (multigrid cycling).
    ///
    /// Gauss-Seidel substitution reads the operator's rows, so `a` is
    /// required for that kind; Jacobi and Richardson ignore it, which lets
    /// matrix-free levels pass `None`.
    pub fn apply_preconditioner_into(
        &self,
        a: Option<&SparseMatrix>,
        r: &[f64],
        z: &mut [f64],
    ) -> Result<()> {
        if r.len() != self.dim() || z.len() != self.dim() {
            return Err(Error::Dimension(
                "preconditioner apply: vector lengths must match the operator".into(),
            ));
        }
        if self.kind == SmootherKind::BlockGaussSeidel && a.is_none() {
            return Err(Error::InvalidArgument(
                "block Gauss-Seidel relaxation needs the assembled level operator".into(),
            ));
        }
        precond_apply_into(self.kind, self.diag.as_ref(), a, r, z);
        Ok(())
    }
}

fn precond_apply_into(
    kind: SmootherKind,
    diag: Option<&BlockDiagonalLu>,
    a: Option<&SparseMatrix>,
    r: &[f64],
    z: &mut [f64],
) {
    match kind {
        SmootherKind::Richardson => z.copy_from_slice(r),
        SmootherKind::BlockJacobi => {
            diag.expect("block Jacobi smoother carries factored blocks")
                .apply_inv_into(r, z);
        }
        SmootherKind::BlockGaussSeidel => {
            let a = a.expect("block Gauss-Seidel substitution reads the operator rows");
            let lu = diag.expect("block Gauss-Seidel smoother carries factored blocks");
            let part = lu.partition().clone();
            z.copy_from_slice(r);
            // forward substitution over the block rows: each block sees the
            // already-solved entries of every earlier block through the
            // strictly lower part of `a`
            for bi in 0..part.n_blocks() {
                let range = part.block(bi);
                for row in range.clone() {
                    let (cols, vals) = a.row(row);
                    let mut acc = z[row];
                    for (&c, &v) in cols.iter().zip(vals) {
                        if c < range.start {
                            acc -= v * z[c];
                        }
                    }
                    z[row] = acc;
                }
                lu.solve_block_in_place(bi, &mut z[range]);
            }
        }
    }
}

fn unit_random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nrm = norm2(&x);
        if nrm > 0.0 {
            return x.iter().map(|v| v / nrm).collect();
        }
    }
}

/// Estimate `ρ(P(A)⁻¹A)` by power iteration from a seeded random unit
/// vector: at least `q` steps, returning `‖P(A)⁻¹A x‖` after the final
/// normalization. The estimate approaches the true spectral radius from
/// below, and a badly unconverged value is dangerous downstream — the
/// damped sweep `I − ωP⁻¹A` with `ω = (4/3)/ρ̃` diverges once
/// `ρ̃ < (2/3)ρ` — so when the iterate norms are still climbing more than
/// [`POWER_STABILIZE_TOL`] per application the iteration continues past
/// `q`, up to [`POWER_STEP_CAP`] applications. Deterministic given the
/// seed.
pub fn estimate_rho(
    a: &SparseMatrix,
    kind: SmootherKind,
    blocks: &BlockPartition,
    q: usize,
    seed: u64,
) -> Result<f64> {
    if a.nrows != a.ncols {
        return Err(Error::Dimension("estimate_rho: matrix must be square".into()));
    }
    let diag = match kind {
        SmootherKind::Richardson => None,
        _ => Some(BlockDiagonalLu::factor(a, blocks)?),
    };
    power_estimate(a, kind, diag.as_ref(), q, seed)
}

/// Relative per-application growth below which the power iteration is
/// considered stabilized.
pub const POWER_STABILIZE_TOL: f64 = 0.01;

/// Hard cap on total power-iteration applications (an explicit `q` above the
/// cap is still honored).
pub const POWER_STEP_CAP: usize = 48;

fn power_estimate(
    a: &SparseMatrix,
    kind: SmootherKind,
    diag: Option<&BlockDiagonalLu>,
    q: usize,
    seed: u64,
) -> Result<f64> {
    let n = a.nrows;
    let cap = POWER_STEP_CAP.max(q + 1);
    let mut x = unit_random(n, seed);
    let mut ax = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut prev = 0.0f64;
    for step in 1..=cap {
        a.spmv_into(&x, &mut ax);
        precond_apply_into(kind, diag, Some(a), &ax, &mut z);
        let nrm = norm2(&z);
        if !nrm.is_finite() {
            return Err(Error::Numerical(format!(
                "power iteration produced a non-finite iterate at step {step}"
            )));
        }
        if nrm == 0.0 {
            // the start vector lay in the kernel of P⁻¹A
            return Ok(0.0);
        }
        // `x` is a unit vector, so `nrm = ‖P⁻¹A x‖` is the step estimate.
        // Past the requested `q` applications, stop once the sequence has
        // stabilized; the running max guards against a terminal wobble.
        if (step > q && nrm - prev <= POWER_STABILIZE_TOL * nrm) || step == cap {
            return Ok(nrm.max(prev));
        }
        prev = nrm;
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi = zi / nrm;
        }
    }
    unreachable!("power iteration loop always returns by the step cap");
}

/// Calibrate a smoother for `a`: estimate `ρ̃ = ρ(P(A)⁻¹A)` by power
/// iteration (at least [`POWER_ITERATIONS`] steps, continuing until the
/// estimate stabilizes) and set `ω = (4/3)/ρ̃`.
pub fn build_smoother(
    a: &SparseMatrix,
    kind: SmootherKind,
    blocks: BlockPartition,
    seed: u64,
) -> Result<SmootherSpec> {
    calibrate_smoother(a, kind, blocks, POWER_ITERATIONS, seed)
}

/// [`build_smoother`] with an explicit power-iteration count.
pub fn calibrate_smoother(
    a: &SparseMatrix,
    kind: SmootherKind,
    blocks: BlockPartition,
    q: usize,
    seed: u64,
) -> Result<SmootherSpec> {
    if a.nrows != a.ncols {
        return Err(Error::Dimension("build_smoother: matrix must be square".into()));
    }
    let diag = match kind {
        SmootherKind::Richardson => None,
        _ => Some(BlockDiagonalLu::factor(a, &blocks)?),
    };
    let rho = power_estimate(a, kind, diag.as_ref(), q, seed)?;
    if !(rho > 0.0) {
        return Err(Error::Numerical(format!(
            "estimated spectral radius {rho} cannot set a damping factor"
        )));
    }
    Ok(SmootherSpec {
        kind,
        omega: (4.0 / 3.0) / rho,
        rho_estimate: rho,
        blocks,
        diag,
    })
}

/// Relax `A x = b` from `x0` with sweeps `x ← x + ω P(A)⁻¹ (b − A x)` until
/// `stop` fires; returns the final iterate and the number of sweeps taken.
///
/// `FixedCount(t)` performs exactly `t` sweeps and never rescales, so a zero
/// start on a homogeneous system stays exactly zero. `Stagnation(γ)` is the
/// candidate-smoothing rule: it watches the decay ratio
/// `‖x_{m−1}‖ / ‖x_m‖` and stops once it drops below `1 + γ` (or at the
/// sweep cap); on homogeneous systems the iterate is renormalized to unit
/// length after each sweep so long relaxations cannot underflow.
pub fn smooth(
    x0: &[f64],
    a: &SparseMatrix,
    s: &SmootherSpec,
    b: &[f64],
    stop: &StopRule,
) -> Result<(Vec<f64>, usize)> {
    let n = a.nrows;
    if a.ncols != n || x0.len() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "smooth: matrix is {}x{}, x0 has {}, b has {}",
            a.nrows,
            a.ncols,
            x0.len(),
            b.len()
        )));
    }
    if s.kind != SmootherKind::Richardson && s.dim() != n {
        return Err(Error::Dimension(format!(
            "smooth: smoother was factored on {} dofs, system has {n}",
            s.dim()
        )));
    }
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut sweep = |x: &mut Vec<f64>, m: usize| -> Result<()> {
        a.spmv_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        s.apply_prec_into(a, &r, &mut z);
        let mut finite = true;
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += s.omega * zi;
            finite &= xi.is_finite();
        }
        if finite {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "smoothing diverged: non-finite iterate at sweep {m}"
            )))
        }
    };
    match *stop {
        StopRule::FixedCount(t) => {
            for m in 1..=t {
                sweep(&mut x, m)?;
            }
            Ok((x, t))
        }
        StopRule::Stagnation(gamma) => {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "stagnation tolerance must be positive and finite, got {gamma}"
                )));
            }
            let homogeneous = b.iter().all(|&v| v == 0.0);
            let mut prev = norm2(&x);
            for m in 1..=STAGNATION_CAP {
                sweep(&mut x, m)?;
                let cur = norm2(&x);
                if cur == 0.0 {
                    // exact fixed point; nothing left to relax
                    return Ok((x, m));
                }
                let ratio = prev / cur;
                if homogeneous {
                    for xi in &mut x {
                        *xi /= cur;
                    }
                    prev = 1.0;
                } else {
                    prev = cur;
                }
                if ratio < 1.0 + gamma {
                    return Ok((x, m));
                }
            }
            Ok((x, STAGNATION_CAP))
        }
    }
}

/// Smooth a tentative prolongator: returns `(I − ω P(A)⁻¹ A) · P` as a
/// sparse matrix. The block Gauss-Seidel variant applies its triangular
/// solve column by column (each column densifies onto the blocks reachable
/// through the lower couplings), so it is meant for modest problem sizes;
/// Jacobi and Richardson stay fully sparse.
pub fn apply_prolongation_smoothing(
    a: &SparseMatrix,
    s: &SmootherSpec,
    p_tent: &SparseMatrix,
) -> Result<SparseMatrix> {
    if a.nrows != a.ncols {
        return Err(Error::Dimension(
            "prolongation smoothing: matrix must be square".into(),
        ));
    }
    if a.ncols != p_tent.nrows {
        return Err(Error::Dimension(format!(
            "prolongation smoothing: matrix is {}x{}, prolongator has {} rows",
            a.nrows, a.ncols, p_tent.nrows
        )));
    }
    if s.omega == 0.0 {
        return Ok(p_tent.clone());
    }
    let y = a.sparse_product(p_tent)?;
    let z = match s.kind {
        SmootherKind::Richardson => y,
        SmootherKind::BlockJacobi => s
            .diag
            .as_ref()
            .expect("block Jacobi smoother carries factored blocks")
            .solve_matrix(&y)?,
        SmootherKind::BlockGaussSeidel => forward_solve_columns(
            a,
            s.diag
                .as_ref()
                .expect("block Gauss-Seidel smoother carries factored blocks"),
            &y,
        )?,
    };
    p_tent.add_scaled(1.0, &z, -s.omega)
}

/// `(D + L)⁻¹ Y` column by column: scatter a sparse column into a dense
/// scratch vector, run the forward block substitution from the first touched
/// block, and harvest the (possibly filled-in) result.
fn forward_solve_columns(
    a: &SparseMatrix,
    lu: &BlockDiagonalLu,
    y: &SparseMatrix,
) -> Result<SparseMatrix> {
    let part = lu.partition().clone();
    let n = y.nrows;
    let yt = y.transpose();
    let mut scratch = vec![0.0; n];
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for j in 0..y.ncols {
        let (rows, vals) = yt.row(j);
        if rows.is_empty() {
            continue;
        }
        for (&i, &v) in rows.iter().zip(vals) {
            scratch[i] = v;
        }
        // substitution only moves information toward later blocks, so
        // nothing before the first touched block can become nonzero
        let first_block = part
            .block_offsets
            .partition_point(|&off| off <= rows[0])
            .saturating_sub(1);
        for bi in first_block..part.n_blocks() {
            let range = part.block(bi);
            for row in range.clone() {
                let (cols, cvals) = a.row(row);
                let mut acc = scratch[row];
                for (&c, &v) in cols.iter().zip(cvals) {
                    if c < range.start {
                        acc -= v * scratch[c];
                    }
                }
                scratch[row] = acc;
            }
            lu.solve_block_in_place(bi, &mut scratch[range]);
        }
        let start = part.block(first_block).start;
        for (i, slot) in scratch.iter_mut().enumerate().skip(start) {
            if *slot != 0.0 {
                triplets.push((i, j, *slot));
                *slot = 0.0;
            }
        }
    }
    SparseMatrix::from_triplets(n, y.ncols, &triplets)
}
