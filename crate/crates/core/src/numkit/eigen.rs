//! Cholesky factorization, symmetric eigensolver and SPD pencil eigenvalues.

use super::matrix::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

fn require_square(a: &Matrix, context: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.rows(),
            actual: a.cols(),
        });
    }
    Ok(())
}

fn require_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {:e})",
            a.asymmetry().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

/// Lower-triangular `L` with `L·Lᵀ = a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    require_square(a, "cholesky of a non-square matrix")?;
    require_symmetric(a)?;
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ·X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `a·x = b` for SPD `a`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    let rhs = Matrix::from_vec(b.len(), 1, b.to_vec());
    Ok(solve_lower_transpose(&l, &solve_lower(&l, &rhs)).into_vec())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in descending order; column `i` of the matrix is the
/// unit eigenvector for eigenvalue `i`, sign-normalized so its largest-magnitude
/// component is positive.
pub fn sym_eigensolve(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    require_square(a, "eigensolve of a non-square matrix")?;
    require_symmetric(a)?;
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();

    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale || off == 0.0 {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                what: "symmetric Jacobi eigensolver",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // m ← Jᵀ m J with J the (p, q) rotation
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (r, x) in col.iter().enumerate() {
            vectors[(r, c)] = sign * x;
        }
    }
    Ok((values, vectors))
}

/// Eigenvalues of `a⁻¹·b` for SPD `a` and `b`, sorted descending.
///
/// Computed as the eigenvalues of the whitened matrix `L⁻¹·b·L⁻ᵀ` with `a = L·Lᵀ`;
/// `a` is never inverted explicitly.
pub fn spd_pencil_eigenvalues(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    require_square(a, "pencil matrix `a` is not square")?;
    require_square(b, "pencil matrix `b` is not square")?;
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            context: "pencil dimensions",
            expected: a.rows(),
            actual: b.rows(),
        });
    }
    let l = cholesky(a)?;
    cholesky(b)?;
    let whitened = whiten(&l, b);
    let (values, _) = sym_eigensolve(&whitened)?;
    if let Some(bad) = values.iter().position(|&x| x <= 0.0) {
        return Err(Error::Numerical(format!(
            "pencil eigenvalue {bad} is non-positive ({:e})",
            values[bad]
        )));
    }
    Ok(values)
}

/// `L⁻¹·b·L⁻ᵀ`, symmetrized.
pub(crate) fn whiten(l: &Matrix, b: &Matrix) -> Matrix {
    let y = solve_lower(l, b);
    solve_lower(l, &y.transpose()).symmetrized()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cholesky_identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn cholesky_hand_example() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert!(close(l.data(), &[2.0, 0.0, 1.0, 2f64.sqrt()], 1e-15));
        assert!(l.matmul_t(&l).sub(&a).max_abs() < 1e-10);
    }

    #[test]
    fn cholesky_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(Error::NotPositiveDefinite { pivot: 1 })
        ));
    }

    #[test]
    fn eigensolve_diagonal() {
        let (vals, vecs) = sym_eigensolve(&Matrix::from_diag(&[5.0, 1.0])).unwrap();
        assert_eq!(vals, vec![5.0, 1.0]);
        assert_eq!(vecs, Matrix::identity(2));
    }

    #[test]
    fn eigensolve_swap_matrix() {
        // λ² − 1 = 0
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let (vals, vecs) = sym_eigensolve(&a).unwrap();
        assert!(close(&vals, &[1.0, -1.0], 1e-14));
        for c in 0..2 {
            let v = vecs.column(c);
            let av = a.matvec(&v);
            assert!(close(&av, &v.iter().map(|x| x * vals[c]).collect::<Vec<_>>(), 1e-12));
        }
    }

    #[test]
    fn eigensolve_identity() {
        let (vals, _) = sym_eigensolve(&Matrix::identity(4)).unwrap();
        assert_eq!(vals, vec![1.0; 4]);
    }

    #[test]
    fn eigensolve_rejects_asymmetric() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigensolve(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pencil_examples() {
        let vals = spd_pencil_eigenvalues(&Matrix::identity(2), &Matrix::from_diag(&[4.0, 1.0]))
            .unwrap();
        assert!(close(&vals, &[4.0, 1.0], 1e-14));

        let vals =
            spd_pencil_eigenvalues(&Matrix::from_diag(&[2.0, 2.0]), &Matrix::identity(2)).unwrap();
        assert!(close(&vals, &[0.5, 0.5], 1e-15));

        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let vals = spd_pencil_eigenvalues(&a, &a).unwrap();
        assert!(close(&vals, &[1.0, 1.0], 1e-14));
    }

    #[test]
    fn pencil_errors() {
        let err = spd_pencil_eigenvalues(&Matrix::identity(2), &Matrix::identity(3));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let indefinite = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let err = spd_pencil_eigenvalues(&Matrix::identity(2), &indefinite);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn spd_solve() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let x = solve_spd(&a, &[2.0, 1.0]).unwrap();
        assert!(close(&a.matvec(&x), &[2.0, 1.0], 1e-14));
    }
}
