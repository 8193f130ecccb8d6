//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Maximum number of full sweeps over all column pairs.
pub const SVD_MAX_SWEEPS: usize = 60;
/// A pair is considered orthogonal once `|a_p·a_q| ≤ tol·‖a_p‖‖a_q‖`.
pub const SVD_ROTATION_TOL: f64 = 1e-12;

/// `x = u · diag(singular_values) · vt`, with `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// n×r, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length r.
    pub singular_values: Vec<f64>,
    /// r×d, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

pub fn svd(x: &Matrix) -> Result<SvdResult> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::InvalidInput("svd of an empty matrix".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput("svd input has non-finite entries".into()));
    }
    if x.rows() < x.cols() {
        let t = svd_tall(&x.transpose())?;
        return Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        });
    }
    svd_tall(x)
}

/// Requires `rows ≥ cols`.
fn svd_tall(x: &Matrix) -> Result<SvdResult> {
    let (m, n) = x.shape();
    // Column-major working copies so rotations touch contiguous memory.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| x.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let frob = x.frobenius_norm();
    // Columns this small carry no information; leave them alone so noise cannot stall convergence.
    let negligible = (frob * f64::EPSILON * 1e-2).powi(2);

    let mut converged = frob == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < SVD_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                if gamma.abs() <= SVD_ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "one-sided Jacobi SVD",
            iterations: sweeps,
        });
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal singular values in column order.
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma_max = norms[order[0]];
    let zero_tol = sigma_max * 1e-14;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > zero_tol && norms[j] > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &missing);

    let singular_values: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = Matrix::zeros(m, n);
    for (c, col) in u_cols.iter().enumerate() {
        for (r, &val) in col.iter().enumerate() {
            u[(r, c)] = val;
        }
    }
    let mut vt = Matrix::zeros(n, n);
    for (r, &j) in order.iter().enumerate() {
        vt.row_mut(r).copy_from_slice(&v[j]);
    }
    Ok(SvdResult {
        u,
        singular_values,
        vt,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (ap, aq) = (*xp, *xq);
        *xp = c * ap - s * aq;
        *xq = s * ap + c * aq;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for (k, col) in cols.iter().enumerate() {
                    // unfilled slots are still zero and contribute nothing
                    if k == slot {
                        continue;
                    }
                    let proj = dot(&e, col);
                    e.iter_mut().zip(col).for_each(|(x, c)| *x -= proj * c);
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 0.5 {
                cols[slot] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}
