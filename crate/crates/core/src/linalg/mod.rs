//! Sparse and small-dense linear algebra kernels used by every other module.
//!
//! All operations are pure functions over immutable inputs and accumulate in
//! a fixed order, so repeated calls are bit-identical.

mod block;
mod dense;
mod lu;
mod mm;
mod sparse;
mod svd;

pub use block::{BlockDiagonalLu, BlockPartition};
pub use dense::{dot, norm2, DenseMatrix};
pub use lu::{dense_lu_solve, DenseLu};
pub use mm::{read_matrix_market, read_vector, write_matrix_market, write_vector};
pub use sparse::SparseMatrix;
pub use svd::{svd, Svd};
