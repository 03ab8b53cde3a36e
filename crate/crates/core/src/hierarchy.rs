//! Adaptive multigrid setup: random candidates are relaxed toward the
//! near-kernel, compressed aggregate by aggregate through singular value
//! decompositions into tentative prolongators, smoothed into the final
//! transfer operators, and contracted by Galerkin triple products into the
//! coarse-level operators.
//!
//! The geometry enters only through an [`AggregateHierarchy`]; everything
//! else is algebraic, so the same setup serves every discretization that can
//! hand over an assembled operator and an element partition. With
//! [`SetupConfig::hstar_top`] an extra trimming level is inserted before the
//! first geometric step: each element keeps just the numerically independent
//! directions of its own candidate block, which deflates high-order bases
//! before any elements merge.
//!
//! Levels below the finest may run *matrix-free*: their assembled operators
//! are dropped after setup and reapplied on demand by prolongating to the
//! finest level, applying the stored fine operator and restricting back
//! (see [`MgHierarchy::apply_level_operator`]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, BlockPartition, DenseLu, DenseMatrix, SparseMatrix};
use crate::meshgraph::ElementGraph;
use crate::partition::AggregateHierarchy;
use crate::smoother::{
    apply_prolongation_smoothing, calibrate_smoother, smooth, SmootherKind, SmootherSpec,
    StopRule, POWER_ITERATIONS, STAGNATION_GAMMA,
};

/// Default relative singular-value cutoff: directions with `σ ≤ δ·σ₁` in an
/// aggregate's candidate block are treated as numerically dependent.
pub const RANK_CUTOFF: f64 = 1e-3;

/// Default number of coarse levels whose assembled operator is dropped after
/// setup and reapplied through the transfer chain.
pub const MATRIX_FREE_LEVELS: usize = 2;

/// Knobs for [`build`]. `Default` reproduces the recommended configuration;
/// deserializing a partial description fills the rest from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetupConfig {
    /// Master seed. Candidate initialization draws from `seed + 1` and the
    /// damping calibration on level `k` from `seed + 1000 + k`, so reruns
    /// with one seed are bit-identical end to end.
    pub seed: u64,
    /// Stagnation tolerance for candidate smoothing: relaxation of a
    /// candidate stops once successive residual norms shrink by less than a
    /// factor `1 + gamma`.
    pub gamma: f64,
    /// Relative singular-value cutoff for per-aggregate rank decisions.
    pub delta: f64,
    /// Aggregate-size divisor: a geometric step keeps `⌈|𝒜|/n_cut⌉` vectors
    /// for an aggregate with `|𝒜|` unknowns. `None` resolves to
    /// `2^d − (d − 1)` for spatial dimension `d`.
    pub n_cut: Option<usize>,
    /// Power-iteration steps used to estimate each level's damping factor.
    pub q: usize,
    /// How many coarse levels run matrix-free (ignored for Gauss–Seidel,
    /// whose substitution sweeps must read assembled rows).
    pub kappa: usize,
    /// Insert an intra-element trimming level before geometric coarsening.
    pub hstar_top: bool,
    /// Relaxation applied on every level.
    pub smoother: SmootherKind,
    /// Number of candidate vectors. `None` resolves to the median unknown
    /// count of the first geometric aggregates.
    pub oversample: Option<usize>,
}

impl Default for SetupConfig {
    fn default() -> Self {
        SetupConfig {
            seed: 0,
            gamma: STAGNATION_GAMMA,
            delta: RANK_CUTOFF,
            n_cut: None,
            q: POWER_ITERATIONS,
            kappa: MATRIX_FREE_LEVELS,
            hstar_top: false,
            smoother: SmootherKind::BlockJacobi,
            oversample: None,
        }
    }
}

impl SetupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "stagnation tolerance must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank cutoff must lie strictly between 0 and 1, got {}",
                self.delta
            )));
        }
        if self.n_cut == Some(0) {
            return Err(Error::InvalidArgument(
                "the aggregate-size divisor must be at least 1".into(),
            ));
        }
        if self.q == 0 {
            return Err(Error::InvalidArgument(
                "damping calibration needs at least one power step".into(),
            ));
        }
        if self.oversample == Some(0) {
            return Err(Error::InvalidArgument(
                "the setup needs at least one candidate vector".into(),
            ));
        }
        Ok(())
    }

    /// The aggregate-size divisor, defaulted by spatial dimension.
    pub fn resolved_n_cut(&self, d: usize) -> usize {
        self.n_cut.unwrap_or((1usize << d) - (d - 1))
    }
}

/// How many left singular vectors an aggregate keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankRule {
    /// Geometric aggregation: keep `⌈|𝒜|/n_cut⌉` vectors, never more than
    /// the δ-numerical rank of the local candidate block.
    Coarsen { n_cut: usize },
    /// Intra-element trimming: keep exactly the δ-numerical rank.
    Trim,
}

/// One level of a multigrid hierarchy.
#[derive(Debug, Clone)]
pub struct Level {
    /// Assembled operator; `None` on matrix-free levels, which are applied
    /// through [`MgHierarchy::apply_level_operator`] instead.
    pub a: Option<SparseMatrix>,
    /// Calibrated relaxation for this level.
    pub smoother: SmootherSpec,
    /// Prolongation from this level to the next finer one
    /// (`n_{k−1} × n_k`); `None` on the finest level.
    pub t_to_finer: Option<SparseMatrix>,
    /// Restriction from the next finer level, the prolongation transpose.
    pub r_from_finer: Option<SparseMatrix>,
    /// Candidate block attached to the level: the smoothed candidates that
    /// fed its outgoing transfer, or the plain restriction on the coarsest
    /// level.
    pub candidates: DenseMatrix,
    /// Whether the transfer that created this level trimmed inside units
    /// rather than merging aggregates.
    pub is_hstar: bool,
    /// Number of unknowns.
    pub dof: usize,
    /// Nonzeros of the assembled operator, recorded before any drop.
    pub nnz: usize,
}

impl Level {
    /// Diagonal-block layout: one block per element on the finest level, one
    /// per aggregate below.
    pub fn blocks(&self) -> &BlockPartition {
        self.smoother.blocks()
    }
}

/// Per-level digest, serializable for machine-readable reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub k: usize,
    pub dof: usize,
    pub nnz: usize,
    pub is_hstar: bool,
    pub omega: f64,
    pub rho_estimate: f64,
}

/// A complete multigrid hierarchy: levels finest-first, the aggregate maps
/// that shaped them, and a dense factorization of the coarsest operator.
#[derive(Debug, Clone)]
pub struct MgHierarchy {
    levels: Vec<Level>,
    aggregates: AggregateHierarchy,
    matrix_free_limit: usize,
    bottom: DenseLu,
}

impl MgHierarchy {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Level {
        &self.levels[k]
    }

    /// Unknowns on level `k`.
    pub fn dim(&self, k: usize) -> usize {
        self.levels[k].dof
    }

    pub fn aggregates(&self) -> &AggregateHierarchy {
        &self.aggregates
    }

    /// Index of the last matrix-free level (0 when every operator is
    /// stored).
    pub fn matrix_free_limit(&self) -> usize {
        self.matrix_free_limit
    }

    /// `A_k · x`: stored rows when the level is explicit; otherwise
    /// prolongate to the finest level, apply the stored fine operator and
    /// restrict back down.
    pub fn apply_level_operator(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        let level = self
            .levels
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("level {k} out of range")))?;
        if x.len() != level.dof {
            return Err(Error::Dimension(format!(
                "level {k} holds {} unknowns, vector has {}",
                level.dof,
                x.len()
            )));
        }
        match &level.a {
            Some(a) => a.spmv(x),
            None => {
                let mut z = x.to_vec();
                for j in (1..=k).rev() {
                    z = self.levels[j]
                        .t_to_finer
                        .as_ref()
                        .expect("coarse levels carry their transfer")
                        .spmv(&z)?;
                }
                let a0 = self.levels[0]
                    .a
                    .as_ref()
                    .expect("the finest operator is always stored");
                let mut w = a0.spmv(&z)?;
                for j in 1..=k {
                    w = self.levels[j]
                        .r_from_finer
                        .as_ref()
                        .expect("coarse levels carry their restriction")
                        .spmv(&w)?;
                }
                Ok(w)
            }
        }
    }

    /// Direct solve with the factored coarsest operator.
    pub fn bottom_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let dof = self.levels.last().map_or(0, |l| l.dof);
        if r.len() != dof {
            return Err(Error::Dimension(format!(
                "bottom solve: coarsest level holds {dof} unknowns, vector has {}",
                r.len()
            )));
        }
        Ok(self.bottom.solve(r))
    }

    /// Per-level digests, finest first.
    pub fn summary(&self) -> Vec<LevelSummary> {
        self.levels
            .iter()
            .enumerate()
            .map(|(k, l)| LevelSummary {
                k,
                dof: l.dof,
                nnz: l.nnz,
                is_hstar: l.is_hstar,
                omega: l.smoother.omega,
                rho_estimate: l.smoother.rho_estimate,
            })
            .collect()
    }
}

/// Draw the initial candidate block: standard normal entries, one column per
/// candidate. The candidate count is the median unknown count over the first
/// geometric aggregates (the whole mesh when nothing coarsens), unless
/// `oversample` pins it explicitly.
pub fn init_candidates(
    graph: &ElementGraph,
    aggregates: &AggregateHierarchy,
    oversample: Option<usize>,
    seed: u64,
) -> Result<DenseMatrix> {
    if aggregates.n_levels() == 0 || aggregates.levels[0].len() != graph.n_elements() {
        return Err(Error::Dimension(
            "aggregate hierarchy does not match the element graph".into(),
        ));
    }
    let r = match oversample {
        Some(0) => {
            return Err(Error::InvalidArgument(
                "the setup needs at least one candidate vector".into(),
            ))
        }
        Some(r) => r,
        None => {
            let level = if aggregates.n_levels() > 1 { 1 } else { 0 };
            let mut sizes: Vec<usize> = aggregates
                .members(level)
                .iter()
                .map(|elems| elems.iter().map(|&e| graph.dof_counts[e]).sum())
                .collect();
            sizes.sort_unstable();
            sizes[(sizes.len() - 1) / 2]
        }
    };
    let n = graph.total_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * r);
    for _ in 0..n * r {
        let v: f64 = StandardNormal.sample(&mut rng);
        values.push(v);
    }
    Ok(DenseMatrix {
        nrows: n,
        ncols: r,
        values,
    })
}

/// Relax every candidate column on the homogeneous system `A x = 0` until
/// its residual decay stagnates. Columns come back unit length (or zero when
/// relaxation annihilates them exactly).
pub fn smooth_candidates(
    b: &DenseMatrix,
    a: &SparseMatrix,
    s: &SmootherSpec,
    gamma: f64,
) -> Result<DenseMatrix> {
    let n = a.nrows;
    if b.nrows != n {
        return Err(Error::Dimension(format!(
            "candidate block has {} rows, operator is {n}-dim",
            b.nrows
        )));
    }
    let zero = vec![0.0; n];
    let stop = StopRule::Stagnation(gamma);
    let columns: Result<Vec<Vec<f64>>> = b
        .values
        .par_chunks(n.max(1))
        .map(|col| smooth(col, a, s, &zero, &stop).map(|(x, _)| x))
        .collect();
    let columns = columns?;
    let mut values = Vec::with_capacity(n * b.ncols);
    for col in &columns {
        values.extend_from_slice(col);
    }
    Ok(DenseMatrix {
        nrows: n,
        ncols: b.ncols,
        values,
    })
}

/// Compress a candidate block into a block-orthonormal tentative
/// prolongator.
///
/// `aggregates[j]` lists the row indices owned by aggregate `j`; together
/// they must partition `0..b.nrows`. Each aggregate keeps the leading left
/// singular vectors of its candidate rows as decided by `rule`, stacked into
/// a column block of the result. Returns the prolongator together with the
/// kept count per aggregate. An aggregate whose candidate rows vanish
/// entirely falls back to a single coordinate vector (with a warning) so the
/// prolongator always has full column rank.
pub fn tentative_prolongator(
    b: &DenseMatrix,
    aggregates: &[Vec<usize>],
    rule: RankRule,
    delta: f64,
) -> Result<(SparseMatrix, Vec<usize>)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rank cutoff must lie strictly between 0 and 1, got {delta}"
        )));
    }
    if let RankRule::Coarsen { n_cut } = rule {
        if n_cut == 0 {
            return Err(Error::InvalidArgument(
                "the aggregate-size divisor must be at least 1".into(),
            ));
        }
    }
    if b.ncols == 0 {
        return Err(Error::InvalidArgument(
            "tentative prolongator needs at least one candidate column".into(),
        ));
    }
    let n = b.nrows;
    let mut seen = vec![false; n];
    for rows in aggregates {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "aggregates must not be empty".into(),
            ));
        }
        for &i in rows {
            if i >= n || seen[i] {
                return Err(Error::Dimension(
                    "aggregates must partition the row indices".into(),
                ));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::Dimension("aggregates must cover every row".into()));
    }

    let locals: Vec<Result<(DenseMatrix, bool)>> = aggregates
        .par_iter()
        .map(|rows| {
            let g = DenseMatrix::from_fn(rows.len(), b.ncols, |i, j| b.get(rows[i], j));
            local_basis(&g, rule, delta)
        })
        .collect();

    let mut kept = Vec::with_capacity(aggregates.len());
    let mut triplets = Vec::new();
    let mut col0 = 0usize;
    for (j, local) in locals.into_iter().enumerate() {
        let (basis, fell_back) = local?;
        if fell_back {
            eprintln!(
                "warning: aggregate {j} has an all-zero candidate block; keeping a unit vector"
            );
        }
        let rows = &aggregates[j];
        for c in 0..basis.ncols {
            for (i, &row) in rows.iter().enumerate() {
                let v = basis.get(i, c);
                if v != 0.0 {
                    triplets.push((row, col0 + c, v));
                }
            }
        }
        kept.push(basis.ncols);
        col0 += basis.ncols;
    }
    let p = SparseMatrix::from_triplets(n, col0, &triplets)?;
    Ok((p, kept))
}

/// Basis for one aggregate: the left singular vectors surviving the rank
/// rule, or a coordinate vector when the block vanishes (flagged `true`).
fn local_basis(g: &DenseMatrix, rule: RankRule, delta: f64) -> Result<(DenseMatrix, bool)> {
    let decomp = svd(g)?;
    let sigma1 = decomp.sigma.first().copied().unwrap_or(0.0);
    if sigma1 <= 0.0 {
        let mut e = DenseMatrix::zeros(g.nrows, 1);
        e.set(0, 0, 1.0);
        return Ok((e, true));
    }
    // σ₁ always survives its own cutoff (δ < 1), so the rank is at least 1
    let rank = decomp
        .sigma
        .iter()
        .take_while(|&&s| s > delta * sigma1)
        .count();
    let s = match rule {
        RankRule::Trim => rank,
        RankRule::Coarsen { n_cut } => rank.min((g.nrows + n_cut - 1) / n_cut),
    };
    let basis = DenseMatrix::from_fn(g.nrows, s, |i, c| decomp.u.get(i, c));
    Ok((basis, false))
}

fn prefix_sums(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut acc = 0usize;
    for &s in sizes {
        out.push(acc);
        acc += s;
    }
    out
}

/// Build the multigrid hierarchy for the operator `a0` discretized on
/// `graph`, coarsening along `aggregates`.
///
/// Each round relaxes the candidate block on the current level, compresses
/// it per aggregate, smooths the tentative prolongator, and contracts
/// operator and candidates to the next level. Coarsening stops when the
/// aggregate levels are exhausted — or earlier, should a step fail to shrink
/// the problem. The coarsest operator is factored densely; levels `1..=κ`
/// then drop their assembled operators (unless the smoother needs them).
pub fn build(
    a0: SparseMatrix,
    graph: &ElementGraph,
    aggregates: &AggregateHierarchy,
    config: &SetupConfig,
) -> Result<MgHierarchy> {
    config.validate()?;
    graph.validate()?;
    aggregates.validate(graph)?;
    let n = graph.total_dofs();
    if a0.nrows != a0.ncols || a0.nrows != n {
        return Err(Error::Dimension(format!(
            "setup: operator is {}x{} but the mesh carries {n} unknowns",
            a0.nrows, a0.ncols
        )));
    }
    if a0.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "setup: operator has non-finite entries".into(),
        ));
    }

    let n_cut = config.resolved_n_cut(aggregates.d);
    let b0 = init_candidates(
        graph,
        aggregates,
        config.oversample,
        config.seed.wrapping_add(1),
    )?;

    // the transfer plan: an optional intra-element trim, then one geometric
    // step per aggregate level
    let mut plan: Vec<Option<usize>> = Vec::new();
    if config.hstar_top {
        plan.push(None);
    }
    plan.extend((1..aggregates.n_levels()).map(Some));

    let mut unit_sizes: Vec<usize> = graph.dof_counts.clone();
    let mut a_k = a0;
    let mut b_k = b0;
    // the transfer that created the current level, with its trim flag
    let mut incoming: Option<(SparseMatrix, SparseMatrix, bool)> = None;
    let mut levels: Vec<Level> = Vec::new();
    let mut stalled: Option<(SmootherSpec, DenseMatrix)> = None;

    for target in plan {
        let blocks = BlockPartition::from_sizes(&unit_sizes)?;
        let smoother = calibrate_smoother(
            &a_k,
            config.smoother,
            blocks,
            config.q,
            config.seed.wrapping_add(1000 + levels.len() as u64),
        )?;
        let b_smooth = smooth_candidates(&b_k, &a_k, &smoother, config.gamma)?;

        let offsets = prefix_sums(&unit_sizes);
        let (rows, rule) = match target {
            // trim: every unit is its own aggregate
            None => {
                let rows: Vec<Vec<usize>> = (0..unit_sizes.len())
                    .map(|u| (offsets[u]..offsets[u] + unit_sizes[u]).collect())
                    .collect();
                (rows, RankRule::Trim)
            }
            // merge the current units (aggregates of level t−1) by their
            // parent aggregate at level t
            Some(t) => {
                let members = aggregates.members(t - 1);
                let parents = &aggregates.levels[t];
                let mut rows: Vec<Vec<usize>> = vec![Vec::new(); aggregates.counts[t]];
                for (u, elems) in members.iter().enumerate() {
                    let p = parents[elems[0]];
                    rows[p].extend(offsets[u]..offsets[u] + unit_sizes[u]);
                }
                (rows, RankRule::Coarsen { n_cut })
            }
        };

        let (p_tent, kept) = tentative_prolongator(&b_smooth, &rows, rule, config.delta)?;
        if p_tent.ncols >= a_k.nrows {
            // the rank rules kept everything; deeper levels would not shrink
            stalled = Some((smoother, b_smooth));
            break;
        }
        let t_mat = apply_prolongation_smoothing(&a_k, &smoother, &p_tent)?;
        let r_mat = t_mat.transpose();
        let a_next = r_mat.sparse_product(&a_k.sparse_product(&t_mat)?)?;
        let b_next = r_mat.spmm_dense(&b_smooth)?;

        let (t_in, r_in, was_trim) = match incoming.take() {
            Some((t, r, f)) => (Some(t), Some(r), f),
            None => (None, None, false),
        };
        levels.push(Level {
            dof: a_k.nrows,
            nnz: a_k.nnz(),
            a: Some(a_k),
            smoother,
            t_to_finer: t_in,
            r_from_finer: r_in,
            candidates: b_smooth,
            is_hstar: was_trim,
        });
        incoming = Some((t_mat, r_mat, target.is_none()));
        a_k = a_next;
        b_k = b_next;
        unit_sizes = kept;
    }

    // coarsest level: reuse the smoother from a stalled step, otherwise
    // calibrate one here so every level reports a damping factor
    let (smoother, candidates) = match stalled {
        Some(pair) => pair,
        None => {
            let blocks = BlockPartition::from_sizes(&unit_sizes)?;
            let s = calibrate_smoother(
                &a_k,
                config.smoother,
                blocks,
                config.q,
                config.seed.wrapping_add(1000 + levels.len() as u64),
            )?;
            (s, b_k)
        }
    };
    let bottom = DenseLu::factor(&a_k.to_dense())
        .map_err(|_| Error::Numerical("setup: the coarsest operator is singular".into()))?;
    let (t_in, r_in, was_trim) = match incoming.take() {
        Some((t, r, f)) => (Some(t), Some(r), f),
        None => (None, None, false),
    };
    levels.push(Level {
        dof: a_k.nrows,
        nnz: a_k.nnz(),
        a: Some(a_k),
        smoother,
        t_to_finer: t_in,
        r_from_finer: r_in,
        candidates,
        is_hstar: was_trim,
    });

    // Gauss–Seidel substitution reads assembled rows during every sweep, so
    // only the other kinds may shed operators; the coarsest level always
    // keeps its own (it backs the dense factorization)
    let matrix_free_limit = if config.smoother == SmootherKind::BlockGaussSeidel {
        0
    } else {
        config.kappa.min(levels.len().saturating_sub(2))
    };
    for level in levels.iter_mut().take(matrix_free_limit + 1).skip(1) {
        level.a = None;
    }

    Ok(MgHierarchy {
        levels,
        aggregates: aggregates.clone(),
        matrix_free_limit,
        bottom,
    })
}
