//! Dense double-precision linear algebra: SVD, Cholesky, symmetric eigensolves
//! and eigenvalues of SPD matrix pencils.
//!
//! Everything here is a pure function of its inputs and deterministic within one build.

mod eigen;
mod matrix;
mod svd;

pub use eigen::{
    cholesky, solve_lower, solve_lower_transpose, solve_spd, spd_pencil_eigenvalues,
    sym_eigensolve,
};
pub(crate) use eigen::whiten;
pub use matrix::{dot, euclidean, norm, Matrix};
pub use svd::{svd, SvdResult, SVD_MAX_SWEEPS, SVD_ROTATION_TOL};
