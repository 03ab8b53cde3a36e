//! Block partitions and factored block-diagonal inverses.

use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;
use crate::linalg::lu::DenseLu;
use crate::linalg::sparse::SparseMatrix;

/// Consecutive dof blocks given by their boundary offsets:
/// block `i` is `block_offsets[i]..block_offsets[i+1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub block_offsets: Vec<usize>,
}

impl BlockPartition {
    /// Validate and wrap: offsets must start at 0 and increase strictly.
    pub fn new(block_offsets: Vec<usize>) -> Result<Self> {
        if block_offsets.len() < 2 || block_offsets[0] != 0 {
            return Err(Error::Dimension(
                "block partition must start at 0 and contain at least one block".into(),
            ));
        }
        if block_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dimension(
                "block partition offsets must be strictly increasing".into(),
            ));
        }
        Ok(BlockPartition { block_offsets })
    }

    /// `n_blocks` blocks of identical `block_size`.
    pub fn uniform(n_blocks: usize, block_size: usize) -> Self {
        BlockPartition {
            block_offsets: (0..=n_blocks).map(|i| i * block_size).collect(),
        }
    }

    /// Partition with the given consecutive block sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0usize;
        for &s in sizes {
            acc += s;
            offsets.push(acc);
        }
        BlockPartition::new(offsets)
    }

    pub fn n_blocks(&self) -> usize {
        self.block_offsets.len() - 1
    }

    /// Total dimension covered.
    pub fn dim(&self) -> usize {
        *self.block_offsets.last().unwrap()
    }

    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        self.block_offsets[i]..self.block_offsets[i + 1]
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.block_offsets[i + 1] - self.block_offsets[i]
    }
}

/// The block diagonal of a square sparse matrix, held as per-block dense LU
/// factors so applications of `D⁻¹` stay backward stable.
#[derive(Debug, Clone)]
pub struct BlockDiagonalLu {
    partition: BlockPartition,
    factors: Vec<DenseLu>,
}

impl BlockDiagonalLu {
    /// Extract and factor the diagonal blocks of `a` under `blocks`.
    pub fn factor(a: &SparseMatrix, blocks: &BlockPartition) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Dimension("block_diagonal: matrix must be square".into()));
        }
        if blocks.dim() != a.nrows {
            return Err(Error::Dimension(format!(
                "block partition covers {} dofs, matrix has {}",
                blocks.dim(),
                a.nrows
            )));
        }
        let mut factors = Vec::with_capacity(blocks.n_blocks());
        for bi in 0..blocks.n_blocks() {
            let range = blocks.block(bi);
            let lo = range.start;
            let size = range.end - range.start;
            let mut block = DenseMatrix::zeros(size, size);
            for i in range.clone() {
                let (cols, vals) = a.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    if range.contains(&c) {
                        block.set(i - lo, c - lo, v);
                    }
                }
            }
            let lu = DenseLu::factor(&block).map_err(|_| {
                Error::Numerical(format!(
                    "diagonal block {bi} (dofs {}..{}) is singular",
                    range.start, range.end
                ))
            })?;
            factors.push(lu);
        }
        Ok(BlockDiagonalLu {
            partition: blocks.clone(),
            factors,
        })
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    /// `z = D⁻¹ r`.
    pub fn apply_inv_into(&self, r: &[f64], z: &mut [f64]) {
        assert_eq!(r.len(), self.dim(), "block solve: rhs length");
        assert_eq!(z.len(), self.dim(), "block solve: output length");
        z.copy_from_slice(r);
        for (bi, lu) in self.factors.iter().enumerate() {
            let range = self.partition.block(bi);
            lu.solve_into(&mut z[range]);
        }
    }

    pub fn apply_inv(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        self.apply_inv_into(r, &mut z);
        z
    }

    /// Solve `D_bi z = rhs` in place for a single block; `rhs` must have the
    /// block's size. Lets substitution-style sweeps interleave block solves
    /// with off-block updates.
    pub fn solve_block_in_place(&self, bi: usize, rhs: &mut [f64]) {
        assert_eq!(
            rhs.len(),
            self.partition.block_size(bi),
            "block solve: slice length must match block size"
        );
        self.factors[bi].solve_into(rhs);
    }

    /// `D⁻¹·M` for sparse `M`: each block row strip of `M` is gathered densely
    /// on its union sparsity, solved, and scattered back. Row patterns within
    /// a strip become the strip's union pattern (entries that solve to exact
    /// zero are kept), which preserves deterministic structure.
    pub fn solve_matrix(&self, m: &SparseMatrix) -> Result<SparseMatrix> {
        if m.nrows != self.dim() {
            return Err(Error::Dimension(format!(
                "solve_matrix: block diagonal is {}-dim, matrix has {} rows",
                self.dim(),
                m.nrows
            )));
        }
        let mut row_offsets = Vec::with_capacity(m.nrows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for (bi, lu) in self.factors.iter().enumerate() {
            let range = self.partition.block(bi);
            let size = range.end - range.start;
            // union of column indices across the strip
            let mut union: Vec<usize> = Vec::new();
            for i in range.clone() {
                let (cols, _) = m.row(i);
                union.extend_from_slice(cols);
            }
            union.sort_unstable();
            union.dedup();
            let pos_of: std::collections::HashMap<usize, usize> =
                union.iter().enumerate().map(|(k, &c)| (c, k)).collect();
            // dense strip, solve all columns
            let mut strip = DenseMatrix::zeros(size, union.len());
            for i in range.clone() {
                let (cols, vals) = m.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    strip.set(i - range.start, pos_of[&c], v);
                }
            }
            lu.solve_matrix_into(&mut strip);
            for local in 0..size {
                for (k, &c) in union.iter().enumerate() {
                    col_indices.push(c);
                    values.push(strip.get(local, k));
                }
                row_offsets.push(col_indices.len());
            }
        }
        SparseMatrix::new(m.nrows, m.ncols, row_offsets, col_indices, values)
    }
}
