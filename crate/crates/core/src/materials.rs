//! Strain energy densities on the symmetric stretch `S`, with gradient and
//! Hessian taken with respect to the 6-vector `s` (`S = symmat(s)`).
//!
//! * ARAP: `ψ = μ‖S − I‖²`
//! * Corotational: `ψ = μ‖S − I‖² + (λ/2) tr²(S − I)`
//! * Neo-Hookean: `ψ = (μ/2)(tr(SᵀS) − 3) − μ ln J + (λ/2) ln² J`, `J = det S`
//!
//! Each model supplies `∂ψ/∂S` and `∂²ψ/∂S²` over general 3×3 matrices; the
//! `s`-derivatives follow by contraction with the 9×6 symmetric basis, so the
//! off-diagonal coordinates pick up their factor of two automatically.

use crate::error::MaterialError;
use crate::kinematics::{mat_to_vec9, sym_basis, symmat, Vector9};
use crate::real::Real;
use nalgebra::{Matrix3, Matrix6, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

type Matrix9<T> = SMatrix<T, 9, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaterialModel {
    #[serde(rename = "ARAP", alias = "arap")]
    Arap,
    #[serde(rename = "Corot", alias = "corot", alias = "corotational")]
    Corot,
    #[serde(rename = "NH", alias = "NeoHookean", alias = "neohookean", alias = "nh")]
    NeoHookean,
}

impl MaterialModel {
    pub const ALL: [MaterialModel; 3] = [MaterialModel::Arap, MaterialModel::Corot, MaterialModel::NeoHookean];
}

impl std::fmt::Display for MaterialModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaterialModel::Arap => "ARAP",
            MaterialModel::Corot => "Corot",
            MaterialModel::NeoHookean => "NH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams<T> {
    pub model: MaterialModel,
    pub density: T,
    pub youngs: T,
    pub poisson: T,
}

impl<T: Real> MaterialParams<T> {
    pub fn new(model: MaterialModel, density: T, youngs: T, poisson: T) -> Result<Self, MaterialError> {
        let p = Self {
            model,
            density,
            youngs,
            poisson,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.youngs > T::zero()) {
            return Err(MaterialError::InvalidParams(format!("E must be positive, got {}", self.youngs)));
        }
        if !(self.poisson >= T::zero() && self.poisson < T::lit(0.5)) {
            return Err(MaterialError::InvalidParams(format!("nu must lie in [0, 0.5), got {}", self.poisson)));
        }
        if !(self.density > T::zero()) {
            return Err(MaterialError::InvalidParams(format!("rho must be positive, got {}", self.density)));
        }
        Ok(())
    }

    /// Shear modulus `E / (2(1 + ν))`.
    pub fn mu(&self) -> T {
        self.youngs / (T::lit(2.0) * (T::one() + self.poisson))
    }

    /// First Lamé parameter `Eν / ((1 + ν)(1 − 2ν))`.
    pub fn lambda(&self) -> T {
        self.youngs * self.poisson / ((T::one() + self.poisson) * (T::one() - T::lit(2.0) * self.poisson))
    }

    /// Eigenvalue floor used by the SPD projection.
    pub fn spd_floor(&self) -> T {
        T::lit(1e-8) * self.mu()
    }
}

/// Energy density, gradient and (projected) Hessian at one element's `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementEnergy<T: Real> {
    pub psi: T,
    pub grad: Vector6<T>,
    pub hess: Matrix6<T>,
}

fn log_det<T: Real>(s: &Matrix3<T>) -> Result<(T, Matrix3<T>), MaterialError> {
    let det = s.determinant();
    if !(det > T::zero()) {
        return Err(MaterialError::Inverted { det: det.as_f64() });
    }
    let inv_t = s.try_inverse().ok_or(MaterialError::Inverted { det: det.as_f64() })?.transpose();
    Ok((det.ln(), inv_t))
}

fn energy_mat<T: Real>(s: &Matrix3<T>, p: &MaterialParams<T>) -> Result<T, MaterialError> {
    let (mu, lambda) = (p.mu(), p.lambda());
    let i = Matrix3::identity();
    let half = T::lit(0.5);
    Ok(match p.model {
        MaterialModel::Arap => mu * (s - i).norm_squared(),
        MaterialModel::Corot => {
            let tr = (s - i).trace();
            mu * (s - i).norm_squared() + half * lambda * tr * tr
        }
        MaterialModel::NeoHookean => {
            let (lj, _) = log_det(s)?;
            half * mu * ((s.transpose() * s).trace() - T::lit(3.0)) - mu * lj + half * lambda * lj * lj
        }
    })
}

/// `∂ψ/∂S` treating all nine entries as independent.
fn stress_mat<T: Real>(s: &Matrix3<T>, p: &MaterialParams<T>) -> Result<Matrix3<T>, MaterialError> {
    let (mu, lambda) = (p.mu(), p.lambda());
    let i = Matrix3::identity();
    let two = T::lit(2.0);
    Ok(match p.model {
        MaterialModel::Arap => (s - i) * (two * mu),
        MaterialModel::Corot => (s - i) * (two * mu) + i * (lambda * (s - i).trace()),
        MaterialModel::NeoHookean => {
            let (lj, inv_t) = log_det(s)?;
            s * mu + inv_t * (lambda * lj - mu)
        }
    })
}

/// `∂²ψ/∂S∂S` as a 9×9 matrix over row-major entries.
fn stress_derivative<T: Real>(s: &Matrix3<T>, p: &MaterialParams<T>) -> Result<Matrix9<T>, MaterialError> {
    let (mu, lambda) = (p.mu(), p.lambda());
    let two = T::lit(2.0);
    let vec_i = mat_to_vec9(&Matrix3::identity());
    Ok(match p.model {
        MaterialModel::Arap => Matrix9::identity() * (two * mu),
        MaterialModel::Corot => Matrix9::identity() * (two * mu) + vec_i * vec_i.transpose() * lambda,
        MaterialModel::NeoHookean => {
            let (lj, inv_t) = log_det(s)?;
            let g = mat_to_vec9(&inv_t);
            let mut h = Matrix9::identity() * mu + g * g.transpose() * lambda;
            // d(S⁻ᵀ)_ab / dS_cd = −S⁻ᵀ_ad S⁻ᵀ_cb
            let coef = mu - lambda * lj;
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            h[(3 * a + b, 3 * c + d)] += coef * inv_t[(a, d)] * inv_t[(c, b)];
                        }
                    }
                }
            }
            h
        }
    })
}

pub fn energy<T: Real>(s: &Vector6<T>, params: &MaterialParams<T>) -> Result<T, MaterialError> {
    energy_mat(&symmat(s), params)
}

pub fn gradient<T: Real>(s: &Vector6<T>, params: &MaterialParams<T>) -> Result<Vector6<T>, MaterialError> {
    let p = stress_mat(&symmat(s), params)?;
    Ok(sym_basis::<T>().transpose() * mat_to_vec9(&p))
}

pub fn hessian<T: Real>(s: &Vector6<T>, params: &MaterialParams<T>, project: bool) -> Result<Matrix6<T>, MaterialError> {
    let c = sym_basis::<T>();
    let h9 = stress_derivative(&symmat(s), params)?;
    let h = c.transpose() * h9 * c;
    let h = (h + h.transpose()) * T::lit(0.5);
    Ok(if project { project_spd(&h, params.spd_floor()) } else { h })
}

/// Clamps the eigenvalues of a symmetric matrix from below at `floor`.
pub fn project_spd<T: Real>(h: &Matrix6<T>, floor: T) -> Matrix6<T> {
    let eig = h.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return *h;
    }
    let clamped = eig.eigenvalues.map(|l| if l < floor { floor } else { l });
    let q = eig.eigenvectors;
    q * Matrix6::from_diagonal(&clamped) * q.transpose()
}

/// All three quantities in one pass, Hessian SPD-projected.
pub fn evaluate<T: Real>(s: &Vector6<T>, params: &MaterialParams<T>) -> Result<ElementEnergy<T>, MaterialError> {
    Ok(ElementEnergy {
        psi: energy(s, params)?,
        grad: gradient(s, params)?,
        hess: hessian(s, params, true)?,
    })
}

/// Energy density as a function of a full deformation gradient, through
/// `S = sqrt(FᵀF)` (used by the displacement-only reference solver).
pub fn energy_of_f<T: Real>(f: &Matrix3<T>, params: &MaterialParams<T>) -> Result<T, MaterialError> {
    let c = f.transpose() * f;
    let eig = c.symmetric_eigen();
    let sq = eig.eigenvalues.map(|l| if l > T::zero() { l.sqrt() } else { T::zero() });
    let s = eig.eigenvectors * Matrix3::from_diagonal(&sq) * eig.eigenvectors.transpose();
    if params.model == MaterialModel::NeoHookean && !(f.determinant() > T::zero()) {
        return Err(MaterialError::Inverted {
            det: f.determinant().as_f64(),
        });
    }
    energy_mat(&s, params)
}

#[doc(hidden)]
pub fn stress_vec9<T: Real>(s: &Matrix3<T>, params: &MaterialParams<T>) -> Result<Vector9<T>, MaterialError> {
    stress_mat(s, params).map(|m| mat_to_vec9(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    fn params(model: MaterialModel) -> MaterialParams<f64> {
        MaterialParams::new(model, 1000.0, 1e5, 0.45).unwrap()
    }

    fn identity_s() -> Vector6<f64> {
        Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn lame_parameters() {
        let p = MaterialParams::<f64>::new(MaterialModel::Corot, 1.0, 1e6, 0.25).unwrap();
        assert!((p.mu() - 4e5).abs() < 1e-6);
        assert!((p.lambda() - 4e5).abs() < 1e-6);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(MaterialParams::new(MaterialModel::Arap, 1.0, 0.0, 0.3).is_err());
        assert!(MaterialParams::new(MaterialModel::Arap, 1.0, 1.0, 0.5).is_err());
        assert!(MaterialParams::new(MaterialModel::Arap, 0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn rest_stability() {
        for m in MaterialModel::ALL {
            let p = params(m);
            assert!(energy(&identity_s(), &p).unwrap().abs() <= 1e-14 * p.mu());
            assert!(gradient(&identity_s(), &p).unwrap().norm() <= 1e-14 * p.mu());
        }
    }

    #[test]
    fn arap_unit_case() {
        let p = MaterialParams::<f64> {
            model: MaterialModel::Arap,
            density: 1.0,
            youngs: 2.0,
            poisson: 0.0,
        };
        assert_eq!(p.mu(), 1.0);
        let s = Vector6::new(2.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        assert!((energy::<f64>(&s, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn arap_hessian_is_constant_diagonal() {
        let p = params(MaterialModel::Arap);
        let mu = p.mu();
        let expect = Matrix6::from_diagonal(&Vector6::new(2.0 * mu, 2.0 * mu, 2.0 * mu, 4.0 * mu, 4.0 * mu, 4.0 * mu));
        for s in [identity_s(), Vector6::new(1.3, 0.7, 1.1, 0.2, -0.1, 0.05)] {
            assert!((hessian(&s, &p, false).unwrap() - expect).abs().max() < 1e-9 * mu);
        }
    }

    #[test]
    fn inverted_neo_hookean_is_an_error() {
        let p = params(MaterialModel::NeoHookean);
        let s = Vector6::new(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        assert!(matches!(energy(&s, &p), Err(MaterialError::Inverted { .. })));
        assert!(gradient(&s, &p).is_err());
        assert!(hessian(&s, &p, true).is_err());
    }

    #[test]
    fn isotropy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for m in MaterialModel::ALL {
            let p = params(m);
            for _ in 0..20 {
                let d = Vector3::from_fn(|_, _| rng.gen_range(0.6..1.5));
                let a = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)));
                let b = UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)));
                let s0 = a.to_rotation_matrix() * Matrix3::from_diagonal(&d) * a.to_rotation_matrix().transpose();
                let s1 = b.to_rotation_matrix() * s0 * b.to_rotation_matrix().transpose();
                let e0 = energy(&crate::kinematics::sym_to_vec(&s0), &p).unwrap();
                let e1 = energy(&crate::kinematics::sym_to_vec(&s1), &p).unwrap();
                assert!((e0 - e1).abs() <= 1e-10 * p.mu().max(e0.abs()));
            }
        }
    }

    #[test]
    fn spd_projection_floor() {
        let p = params(MaterialModel::NeoHookean);
        // Heavy compression makes μ − λ ln J large and the raw Hessian indefinite in places.
        for s in [
            Vector6::new(0.05, 1.8, 1.9, 0.3, 0.0, 0.1),
            Vector6::new(3.0, 0.1, 0.2, 0.0, 0.05, 0.0),
        ] {
            let h = hessian(&s, &p, true).unwrap();
            let min = h.symmetric_eigen().eigenvalues.min();
            assert!(min >= p.spd_floor() * (1.0 - 1e-6), "min eigenvalue {min}");
        }
    }

    #[test]
    fn energy_of_f_matches_s_form() {
        let p = params(MaterialModel::NeoHookean);
        let r = UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.2, 0.9)).to_rotation_matrix().into_inner();
        let s = Vector6::new(1.2, 0.9, 1.05, 0.02, -0.03, 0.01);
        let f = r * symmat(&s);
        assert!((energy_of_f(&f, &p).unwrap() - energy(&s, &p).unwrap()).abs() < 1e-9 * p.mu());
    }
}
