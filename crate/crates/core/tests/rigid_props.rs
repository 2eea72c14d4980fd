use nalgebra::{DVector, Matrix3};
use proptest::prelude::*;

use disco_core::registration::{lie_exp, lie_log};

fn hat2(theta: f64, u: (f64, f64)) -> Matrix3<f64> {
    Matrix3::new(0.0, -theta, u.0, theta, 0.0, u.1, 0.0, 0.0, 0.0)
}

proptest! {
    #[test]
    fn planar_exp_matches_matrix_exponential(theta in -3.0f64..3.0, ux in -2.0f64..2.0, uy in -2.0f64..2.0) {
        let g = lie_exp(&DVector::from_vec(vec![theta, ux, uy])).unwrap();
        let oracle = hat2(theta, (ux, uy)).exp();
        let h = g.to_homogeneous();
        for r in 0..2 {
            for c in 0..2 {
                prop_assert!((h[(r, c)] - oracle[(r, c)]).abs() < 1e-9);
            }
            prop_assert!((h[(r, 3)] - oracle[(r, 2)]).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_log_round_trip(w in prop::array::uniform3(-1.7f64..1.7), u in prop::array::uniform3(-2.0f64..2.0)) {
        let x = DVector::from_vec(vec![w[0], w[1], w[2], u[0], u[1], u[2]]);
        let g = lie_exp(&x).unwrap();
        let r = g.rotation;
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        let back = lie_log(&g, 3).unwrap();
        prop_assert!((back - x).amax() < 1e-8);
    }

    #[test]
    fn inverse_composes_to_identity(x in prop::collection::vec(-1.5f64..1.5, 6)) {
        let g = lie_exp(&DVector::from_vec(x)).unwrap();
        let e = g.compose(&g.inverse()).to_homogeneous();
        prop_assert!((e - nalgebra::Matrix4::identity()).amax() < 1e-12);
    }
}
