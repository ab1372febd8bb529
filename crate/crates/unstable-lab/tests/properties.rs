//! Randomized invariants over the core decompositions.

use nalgebra::DMatrix;
use proptest::prelude::*;

use unstable_lab::kalman::{analysis_update, cholesky_factor, precision_matrix, Covariance};
use unstable_lab::lyapunov::qr_positive;
use unstable_lab::perturbation::{psi_series, stable_block};

fn matrix_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0f64..5.0, n * n)
        .prop_map(move |data| DMatrix::from_row_slice(n, n, &data))
}

fn upper_triangular_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix_strategy(n).prop_map(move |m| {
        DMatrix::from_fn(n, n, |r, c| if r <= c { m[(r, c)] } else { 0.0 })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qr_positive_reconstructs_or_reports_degeneracy(a in matrix_strategy(5)) {
        match qr_positive(&a) {
            Ok((q, r)) => {
                prop_assert!(q.orthonormality_defect() < 1e-12);
                prop_assert!((&q.0 * &r.0 - &a).norm() <= 1e-12 * a.norm().max(1.0));
                prop_assert!(r.0.diagonal().iter().all(|&d| d > 0.0));
            }
            Err(_) => {
                // Rejection is only allowed for genuinely tiny singular values.
                let min_sv = a.clone().svd(false, false).singular_values.min();
                prop_assert!(min_sv < 1e-10 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn stable_blocks_of_products_are_products_of_blocks(
        a in upper_triangular_strategy(6),
        b in upper_triangular_strategy(6),
        n0 in 1usize..5,
    ) {
        use unstable_lab::lyapunov::TransitionTriangle;
        let product = TransitionTriangle(&a * &b);
        let lhs = stable_block(&product, n0).unwrap();
        let rhs = stable_block(&TransitionTriangle(a), n0).unwrap()
            * stable_block(&TransitionTriangle(b), n0).unwrap();
        prop_assert!((lhs - &rhs).amax() <= 1e-12 * rhs.amax().max(1.0));
    }

    #[test]
    fn psi_never_drops_below_one(
        triangles in prop::collection::vec(upper_triangular_strategy(4), 1..12),
        n0 in 1usize..3,
    ) {
        use unstable_lab::lyapunov::TransitionTriangle;
        let triangles: Vec<TransitionTriangle> =
            triangles.into_iter().map(TransitionTriangle).collect();
        let psi = psi_series(&triangles, n0, 1e-30).unwrap();
        for series in &psi.values {
            prop_assert!(series.iter().all(|&v| v >= 1.0));
        }
    }

    #[test]
    fn analysis_update_contracts_in_psd_order(
        root in matrix_strategy(4),
        h in prop::collection::vec(-3.0f64..3.0, 2 * 4),
    ) {
        let p = Covariance::new(&root * root.transpose()).unwrap();
        let h = DMatrix::from_row_slice(2, 4, &h);
        let omega = precision_matrix(&h, &DMatrix::identity(2, 2)).unwrap();
        let pa = analysis_update(&p, &omega).unwrap();
        let min_eig = (&p.0 - &pa.0).symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-10 * p.0.norm().max(1.0));
        // The factor reproduces the analysis covariance.
        let x = cholesky_factor(&pa).unwrap();
        prop_assert!((&x.0 * x.0.transpose() - &pa.0).amax() <= 1e-9 * pa.0.amax().max(1e-12));
    }
}
