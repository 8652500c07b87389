//! Rotation extraction for the local step.

use crate::real::Real;
use nalgebra::Matrix3;

/// Frobenius inner product `⟨A, B⟩_F`.
pub fn frobenius<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    a.component_mul(b).sum()
}

/// Solves the orthogonal Procrustes problem `argmax_{R ∈ SO(3)} ⟨R, M⟩_F`.
///
/// With `M = U Σ Vᵀ` the maximizer is `U diag(1, 1, det(UVᵀ)) Vᵀ`, where the
/// sign flip is applied to the direction of the smallest singular value.
/// Rank-deficient `M` is fine; the completion of `U`/`V` is whatever the SVD
/// returns and is deterministic for a given input.
pub fn polar_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    if !m.iter().all(|x| x.is_finite()) {
        return Matrix3::identity();
    }
    let svd = m.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    if (u * v_t).determinant() < T::zero() {
        let sv = svd.singular_values;
        let mut k = 0;
        for i in 1..3 {
            if sv[i] < sv[k] {
                k = i;
            }
        }
        for r in 0..3 {
            u[(r, k)] = -u[(r, k)];
        }
    }
    u * v_t
}

/// Local-step target `(λ/β + F)(S − N)ᵀ` whose Procrustes maximizer is the
/// element rotation; `N` is the reference-frame completion (zero for tets).
pub fn local_target<T: Real>(
    lambda: &Matrix3<T>,
    beta: T,
    f: &Matrix3<T>,
    s: &Matrix3<T>,
    frame: &Matrix3<T>,
) -> Matrix3<T> {
    (lambda / beta + f) * (s - frame).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    fn rot(v: Vector3<f64>) -> Matrix3<f64> {
        UnitQuaternion::from_scaled_axis(v).to_rotation_matrix().into_inner()
    }

    fn check_rotation(r: &Matrix3<f64>) {
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-10);
        assert!((r.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_maps_to_identity() {
        assert!((polar_rotation(&Matrix3::<f64>::identity()) - Matrix3::identity()).abs().max() < 1e-14);
    }

    #[test]
    fn recovers_known_factor() {
        let r0 = rot(Vector3::new(0.4, -1.1, 0.3));
        let m = r0 * Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0));
        let r = polar_rotation(&m);
        assert!((r - r0).abs().max() < 1e-12);
    }

    #[test]
    fn reflection_is_corrected() {
        let m = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, -0.5));
        let r = polar_rotation(&m);
        check_rotation(&r);
        assert!((r - Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for rank in 0..3 {
            let mut m = Matrix3::<f64>::zeros();
            for _ in 0..rank {
                let a = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let b = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                m += a * b.transpose();
            }
            let r = polar_rotation(&m);
            check_rotation(&r);
            assert_eq!(r, polar_rotation(&m));
        }
    }

    #[test]
    fn equivariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let r0 = rot(Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)));
            let lhs = polar_rotation(&(r0 * m));
            let rhs = r0 * polar_rotation(&m);
            assert!((lhs - rhs).abs().max() < 1e-9);
        }
    }

    #[test]
    fn shape_matching_case() {
        // λ = 0, S = I, F = R₀ gives R₀ back.
        let r0 = rot(Vector3::new(-0.2, 0.5, 2.0));
        let t = local_target(&Matrix3::zeros(), 1.0, &r0, &Matrix3::identity(), &Matrix3::zeros());
        assert!((polar_rotation(&t) - r0).abs().max() < 1e-12);
    }
}
