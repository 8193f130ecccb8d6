use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shifcon::numkit::{cholesky, solve_spd, spd_pencil_eigenvalues, svd, sym_eigensolve, Matrix};
use shifcon::Error;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let g = random_matrix(rng, d, d);
    g.t_matmul(&g).add_diagonal(0.1 * d as f64).symmetrized()
}

fn matrix_strategy(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(x in matrix_strategy(12, 8)) {
        let s = svd(&x).unwrap();
        let scale = x.max_abs().max(1.0);
        prop_assert!(s.reconstruct().sub(&x).max_abs() <= 1e-10 * scale);
        let r = s.singular_values.len();
        let vvt = s.vt.matmul_t(&s.vt);
        prop_assert!(vvt.sub(&Matrix::identity(r)).max_abs() <= 1e-10);
        for w in s.singular_values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(s.singular_values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn svd_values_match_nalgebra(x in matrix_strategy(10, 10)) {
        let ours = svd(&x).unwrap().singular_values;
        let mut theirs: Vec<f64> = to_na(&x).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(ours.len(), theirs.len());
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-9 * theirs[0].max(1.0));
        }
    }

    #[test]
    fn eigensolve_diagonalizes(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, d, d);
        let sym = a.add(&a.transpose()).scale(0.5);
        let (values, vectors) = sym_eigensolve(&sym).unwrap();
        let av = sym.matmul(&vectors);
        for j in 0..d {
            for i in 0..d {
                prop_assert!((av[(i, j)] - values[j] * vectors[(i, j)]).abs() <= 1e-10);
            }
        }
        prop_assert!(vectors.t_matmul(&vectors).sub(&Matrix::identity(d)).max_abs() <= 1e-10);
    }

    #[test]
    fn cholesky_factor_reproduces_input(seed in any::<u64>(), d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, d);
        let l = cholesky(&a).unwrap();
        prop_assert!(l.matmul_t(&l).sub(&a).max_abs() <= 1e-10 * a.max_abs());
        for i in 0..d {
            for j in i + 1..d {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn pencil_eigenvalues_match_nalgebra(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_spd(&mut rng, d), random_spd(&mut rng, d));
        let ours = spd_pencil_eigenvalues(&a, &b).unwrap();
        let inv = to_na(&a).try_inverse().unwrap();
        let mut theirs: Vec<f64> = (inv * to_na(&b)).complex_eigenvalues().iter().map(|c| c.re).collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{:?} vs {:?}", ours, theirs);
        }
    }

    #[test]
    fn spd_solve_inverts(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&x);
        let solved = solve_spd(&a, &b).unwrap();
        for (s, t) in solved.iter().zip(&x) {
            prop_assert!((s - t).abs() <= 1e-9);
        }
    }
}

#[test]
fn pencil_of_identity_and_diagonal() {
    let a = Matrix::identity(2);
    let b = Matrix::from_diag(&[4.0, 1.0]);
    assert_eq!(spd_pencil_eigenvalues(&a, &b).unwrap(), vec![4.0, 1.0]);
}

#[test]
fn indefinite_pencil_is_rejected() {
    let a = Matrix::from_diag(&[1.0, -1.0]);
    let err = spd_pencil_eigenvalues(&a, &Matrix::identity(2)).unwrap_err();
    assert!(matches!(err, Error::NotPositiveDefinite { .. }), "{err}");
}

#[test]
fn tall_and_wide_inputs_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_matrix(&mut rng, 4, 9);
    let a = svd(&x).unwrap().singular_values;
    let b = svd(&x.transpose()).unwrap().singular_values;
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-12);
    }
}
