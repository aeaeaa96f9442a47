use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ridgeless::linalg::{min_norm_solve, reduced_svd, ridge_solve, DenseMatrix, RankTolerance};

fn matrix(max_dim: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(n, p)| {
        prop::collection::vec(-3.0f64..3.0, n * p)
            .prop_map(move |v| DenseMatrix::from_column_major(n, p, v).unwrap())
    })
}

fn matrix_and_target(max_dim: usize) -> impl Strategy<Value = (DenseMatrix, Vec<f64>)> {
    matrix(max_dim).prop_flat_map(|x| {
        let n = x.rows();
        (Just(x), prop::collection::vec(-3.0f64..3.0, n))
    })
}

/// `(X'X)^+` from an eigen-decomposition of the Gram matrix, independent of
/// the library's SVD path.
fn gram_pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    let g = x.transpose() * x;
    let eig = g.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut inv = DMatrix::zeros(g.nrows(), g.ncols());
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 1e-12 * top {
            let v = eig.eigenvectors.column(j);
            inv += (v * v.transpose()) / l;
        }
    }
    inv
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn gram_pseudo_inverse_identities(x in matrix(20)) {
        let a = x.as_matrix();
        prop_assume!(a.norm() > 1e-3);
        let gp = gram_pinv(a);
        let g = a.transpose() * a;
        let scale = a.norm().max(1.0);
        prop_assert!((a * &gp * &g - a).norm() < 1e-8 * scale);
        prop_assert!((&gp * &g * &gp - &gp).norm() < 1e-8 * gp.norm().max(1.0));
    }

    #[test]
    fn min_norm_matches_gram_pseudo_inverse((x, y) in matrix_and_target(15)) {
        let a = x.as_matrix();
        let svd = reduced_svd(&x, RankTolerance::default()).unwrap();
        // Skip numerically ambiguous ranks.
        let s = &svd.singular_values;
        prop_assume!(s.is_empty() || *s.last().unwrap() > 1e-6 * s[0]);
        let b = min_norm_solve(&x, &y, RankTolerance::default()).unwrap();
        let oracle = gram_pinv(a) * (a.transpose() * DVector::from_vec(y.clone()));
        let err = (DVector::from_vec(b) - &oracle).norm();
        prop_assert!(err < 1e-7 * oracle.norm().max(1.0));
    }

    #[test]
    fn null_space_shifts_never_shrink_the_solution((x, y) in matrix_and_target(12), shift in prop::collection::vec(-1.0f64..1.0, 12)) {
        let p = x.cols();
        let b = min_norm_solve(&x, &y, RankTolerance::default()).unwrap();
        let svd = reduced_svd(&x, RankTolerance::default()).unwrap();
        let z = DVector::from_iterator(p, shift.iter().cycle().take(p).cloned());
        let v = &svd.right;
        let null = &z - v * v.tr_mul(&z);
        let moved: Vec<f64> = b.iter().zip(null.iter()).map(|(a, d)| a + d).collect();
        prop_assert!(norm(&moved) >= norm(&b) * (1.0 - 1e-12) - 1e-12);
    }

    #[test]
    fn ridge_converges_to_min_norm((x, y) in matrix_and_target(10)) {
        let svd = reduced_svd(&x, RankTolerance::default()).unwrap();
        let s = &svd.singular_values;
        prop_assume!(!s.is_empty() && *s.last().unwrap() > 1e-2 * s[0] && s[0] > 1e-2);
        let b = min_norm_solve(&x, &y, RankTolerance::default()).unwrap();
        let gaps: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10]
            .iter()
            .map(|&l| {
                let r = ridge_solve(&x, &y, l).unwrap();
                norm(&r.iter().zip(&b).map(|(a, c)| a - c).collect::<Vec<_>>())
            })
            .collect();
        for w in gaps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!(gaps[4] < 1e-6 * norm(&b).max(1.0));
    }

    #[test]
    fn solves_are_deterministic((x, y) in matrix_and_target(12)) {
        let a = min_norm_solve(&x, &y, RankTolerance::default()).unwrap();
        let b = min_norm_solve(&x.clone(), &y.clone(), RankTolerance::default()).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
