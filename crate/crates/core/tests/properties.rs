use nalgebra::DMatrix;
use proptest::prelude::*;

use mgloop::jacobians::{parallelepiped_volume, sylvester_sides};
use mgloop::liealg::{exp_map, inner, orthonormal_basis, AlgebraElement};

fn algebra(n: usize) -> impl Strategy<Value = AlgebraElement> {
    prop::collection::vec(-2.0f64..2.0, n * n - 1).prop_map(move |c| AlgebraElement::from_coeffs(&orthonormal_basis(n), &c))
}

fn matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1.5f64..1.5, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_lands_in_the_group_and_inverts(x in (2usize..=3).prop_flat_map(algebra)) {
        let g = exp_map(&x).unwrap();
        prop_assert!(g.is_valid(1e-10));
        let back = exp_map(&x.scale(-1.0)).unwrap();
        prop_assert!(g.mul(&back).frobenius_distance_to_identity() < 1e-10);
    }

    #[test]
    fn adjoint_action_is_an_isometry_and_a_homomorphism(
        (x, y, z) in (2usize..=3).prop_flat_map(|n| (algebra(n), algebra(n), algebra(n)))
    ) {
        let g = exp_map(&z).unwrap();
        let (ax, ay) = (g.adjoint_action(&x), g.adjoint_action(&y));
        prop_assert!((inner(&ax, &ay).unwrap() - inner(&x, &y).unwrap()).abs() < 1e-9);
        let lhs = g.adjoint_action(&x.commutator(&y));
        let rhs = ax.commutator(&ay);
        let mut diff = lhs.clone();
        diff.axpy(-1.0, &rhs);
        prop_assert!(diff.norm() <= 1e-9 * (1.0 + lhs.norm()));
        let undone = g.inverse_adjoint_action(&ax);
        let mut d = undone;
        d.axpy(-1.0, &x);
        prop_assert!(d.norm() < 1e-10);
    }

    #[test]
    fn sylvester_sides_agree(m in matrix(8, 5)) {
        let (l, r) = sylvester_sides(&m);
        prop_assert!(l >= 1.0 - 1e-12);
        prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0) * 10.0);
    }

    #[test]
    fn parallelepiped_volume_is_the_gram_root(m in matrix(6, 4)) {
        prop_assume!(m.ncols() <= m.nrows());
        let gram = (m.transpose() * &m).determinant().max(0.0).sqrt();
        let v = parallelepiped_volume(&m);
        prop_assert!((v - gram).abs() <= 1e-10 * gram.max(1.0), "{v} vs {gram}");
    }
}
