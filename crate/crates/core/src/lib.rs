//! Adaptive smoothed-aggregation multigrid for discontinuous Galerkin
//! discretizations.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] — CSR sparse matrices, dense kernels, LU and SVD
//!   factorizations, block-diagonal appliers.
//! * [`meshgraph`] — Cartesian box meshes, element connectivity graphs and
//!   their file format, degree-of-freedom maps.
//! * [`partition`] — deterministic recursive graph bisection and the nested
//!   aggregate hierarchy built from it.
//! * [`dg`] — interior-penalty and local DG assembly of diffusion and
//!   convection operators on tensor-product Gauss–Lobatto bases, plus
//!   manufactured right-hand sides.
//! * [`smoother`] — block-Jacobi smoothers, spectral-radius estimation and
//!   prolongator smoothing.
//! * [`hierarchy`] — the adaptive candidate-based multigrid setup producing
//!   a [`hierarchy::MgHierarchy`].
//! * [`solver`] — V-cycles, stationary multigrid, preconditioned CG and
//!   restarted GMRES, and machine-readable solve reports.
//!
//! Everything is deterministic for a fixed seed: random draws come from a
//! counter-mode generator, reductions run in index order, and no wall-clock
//! data enters any serialized artifact.

pub mod dg;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod meshgraph;
pub mod partition;
pub mod smoother;
pub mod solver;

pub use error::{Error, Result};
