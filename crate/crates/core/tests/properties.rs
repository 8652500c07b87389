use mixedfem::kinematics::{sym_to_vec, symmat};
use mixedfem::materials::energy_of_f;
use mixedfem::rotation::{frobenius, polar_rotation};
use mixedfem::{MaterialModel, MaterialParams};
use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;

fn matrix3() -> impl Strategy<Value = Matrix3<f64>> {
    proptest::array::uniform9(-2.0f64..2.0).prop_map(|a| Matrix3::from_row_slice(&a))
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (proptest::array::uniform3(-1.0f64..1.0), -3.1f64..3.1).prop_filter_map("zero axis", |(a, angle)| {
        let axis = Vector3::from(a);
        (axis.norm() > 1e-3).then(|| *UnitQuaternion::from_scaled_axis(axis.normalize() * angle).to_rotation_matrix().matrix())
    })
}

proptest! {
    #[test]
    fn polar_rotation_is_proper(m in matrix3()) {
        let r = polar_rotation(&m);
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-10);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn polar_rotation_beats_perturbations(m in matrix3(), q in rotation()) {
        let r = polar_rotation(&m);
        // Any other rotation, here R·Q, scores no better on ⟨R, M⟩.
        prop_assert!(frobenius(&r, &m) >= frobenius(&(r * q), &m) - 1e-9);
    }

    #[test]
    fn symmat_round_trip(a in proptest::array::uniform6(-5.0f64..5.0)) {
        let s = Vector6::from_row_slice(&a);
        let m = symmat(&s);
        prop_assert_eq!(m, m.transpose());
        prop_assert_eq!(sym_to_vec(&m), s);
    }

    #[test]
    fn energies_are_rotation_invariant(q in rotation(), d in proptest::array::uniform3(0.6f64..1.6), u in rotation()) {
        // F = U diag(d) with det F > 0.
        let f = u * Matrix3::from_diagonal(&Vector3::from(d));
        for model in [MaterialModel::Arap, MaterialModel::Corot, MaterialModel::NeoHookean] {
            let params = MaterialParams::new(model, 1000.0, 1e5, 0.45).unwrap();
            let a = energy_of_f(&f, &params).unwrap();
            let b = energy_of_f(&(q * f), &params).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{:?}: {} vs {}", model, a, b);
        }
    }
}
