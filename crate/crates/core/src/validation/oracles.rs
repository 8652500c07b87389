//! Reference implementations used as oracles.
//!
//! Everything here is written directly from the definitions with dense
//! linear algebra and no reuse of the solver's assembly paths, so agreement
//! with the production code is evidence rather than tautology.

use crate::materials;
use crate::mesh::{ElementKind, SimMesh};
use crate::solver::Simulation;
use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

pub fn random_matrix<R: Rng>(rng: &mut R, scale: f64) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random symmetric stretch near identity with `det ≥ min_det` and positive
/// eigenvalues, as a 6-vector `(S00, S11, S22, S12, S02, S01)`.
pub fn random_stretch<R: Rng>(rng: &mut R, spread: f64, min_det: f64) -> Vector6<f64> {
    loop {
        let a = random_matrix(rng, spread);
        let s = Matrix3::identity() + (a + a.transpose()) * 0.5;
        let eig = s.symmetric_eigen();
        if s.determinant() > min_det && eig.eigenvalues.min() > 0.0 {
            return Vector6::new(s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(1, 2)], s[(0, 2)], s[(0, 1)]);
        }
    }
}

pub fn sym_from6(s: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2])
}

/// Symmetric positive semidefinite square root `sqrt(FᵀF)` by eigendecomposition.
pub fn stretch_factor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = (f.transpose() * f).symmetric_eigen();
    let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&sq) * eig.eigenvectors.transpose()
}

/// Rotation factor of an invertible `F` with `det F > 0`: `F S⁻¹`.
pub fn rotation_factor(f: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    stretch_factor(f).try_inverse().map(|si| f * si)
}

/// Least-squares linear map taking rest edges (from vertex 0) to deformed
/// edges; the minimum-norm solution for shells and rods, whose edges do not
/// span space.
pub fn fitted_deformation_gradient(rest: &[Vector3<f64>], deformed: &[Vector3<f64>]) -> Matrix3<f64> {
    let k = rest.len() - 1;
    let x = DMatrix::from_fn(3, k, |r, c| rest[c + 1][r] - rest[0][r]);
    let d = DMatrix::from_fn(3, k, |r, c| deformed[c + 1][r] - deformed[0][r]);
    let pinv = x.pseudo_inverse(1e-14).expect("pseudo-inverse");
    let f = d * pinv;
    Matrix3::from_fn(|r, c| f[(r, c)])
}

/// `Σ_v x_v g_vᵀ` for one element, written as the dense product `X Gᵀ`
/// of the 3×n vertex matrix and the element's gradient rows.
pub fn deformation_gradient_from_rows(mesh: &SimMesh<f64>, e: usize, q: &[f64]) -> Matrix3<f64> {
    let el = mesh.element(e);
    let n = el.len();
    let x = DMatrix::from_fn(3, n, |r, c| q[3 * el[c] + r]);
    let g = DMatrix::from_fn(n, 3, |r, c| mesh.grad(e)[r][c]);
    let f = x * g;
    Matrix3::from_fn(|r, c| f[(r, c)])
}

/// `⟨polar(M), M⟩ − max_k ⟨R_k, M⟩` over sampled rotations.
pub fn procrustes_margin(r: &Matrix3<f64>, m: &Matrix3<f64>, samples: &[Matrix3<f64>]) -> f64 {
    let best = samples
        .iter()
        .map(|s| s.component_mul(m).sum())
        .fold(f64::NEG_INFINITY, f64::max);
    r.component_mul(m).sum() - best
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + eps;
            let p = f(&y);
            y[i] = x[i] - eps;
            let m = f(&y);
            y[i] = x[i];
            (p - m) / (2.0 * eps)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function, `J[i][j] = ∂f_i/∂x_j`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut y = x.to_vec();
    for j in 0..n {
        y[j] = x[j] + eps;
        let p = f(&y);
        y[j] = x[j] - eps;
        let q = f(&y);
        y[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (p[i] - q[i]) / (2.0 * eps);
        }
    }
    jac
}

/// Solution of the dense equality-constrained quadratic model at `(q, s)`.
#[derive(Debug, Clone)]
pub struct DenseModelSolution {
    /// Free-DOF increment.
    pub dq: DVector<f64>,
    pub ds: DVector<f64>,
    pub l: DVector<f64>,
}

/// Builds and solves the full `(Δq, Δs, l)` stationarity system of the
/// Lagrangian `E − Σ dv lᵀc` linearized at `(q, s)` with rotations fixed:
///
/// ```text
/// minimize  ½Δqᵀ(M/h²)Δq + ∇_qEᵀΔq + Σ dv (gᵀΔs + ½ΔsᵀHΔs)
/// subject to  R(S + ΔS) − F(q + Δq) − RN = −κ l   per element
/// ```
///
/// with `κ = (ε I + ρ P_skew) / μ` the optional regularization the
/// production path adds (`P_skew` computed here as `I − W(WᵀW)⁻¹Wᵀ`).
/// Gravity is the only external force; scenes with a ground plane are not
/// supported.
pub fn dense_model_solve(
    sim: &Simulation<f64>,
    q: &[f64],
    s: &[f64],
    rotations: &[Matrix3<f64>],
    tikhonov: f64,
    rotation_compliance: f64,
) -> Result<DenseModelSolution, String> {
    let mesh = sim.mesh();
    let params = &sim.scene().material;
    let mu = params.mu();
    let h = sim.config().h;
    let state = sim.state();
    let proj = sim.projection();
    let free = proj.free_dofs();
    let nf = free.len();
    let ne = mesh.num_elements();
    let dim = nf + 15 * ne;
    let (off_s, off_l) = (nf, nf + 6 * ne);
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);

    let mut free_index = vec![usize::MAX; q.len()];
    for (k, &d) in free.iter().enumerate() {
        free_index[d] = k;
    }

    // Position rows.
    let mass = sim.mass();
    let fext = sim.external_force();
    for (k, &d) in free.iter().enumerate() {
        a[(k, k)] = mass[d] / (h * h);
        let acc = q[d] - 2.0 * state.q[d] + state.q_prev[d];
        b[k] = -(mass[d] * acc / (h * h) - fext[d]);
    }

    for e in 0..ne {
        let v = mesh.volume(e);
        let r = rotations[e];
        let se = Vector6::from_column_slice(&s[6 * e..6 * e + 6]);
        let ee = materials::evaluate(&se, params).map_err(|err| err.to_string())?;

        // dvec(F)/dq restricted to this element: vec(F)[3i + j] = Σ_v x_v[i] g_v[j].
        let el = mesh.element(e);
        let mut jac = DMatrix::<f64>::zeros(9, q.len());
        for (vi, &vert) in el.iter().enumerate() {
            let g = mesh.grad(e)[vi];
            for i in 0..3 {
                for j in 0..3 {
                    jac[(3 * i + j, 3 * vert + i)] += g[j];
                }
            }
        }
        // vec(R symmat(e_k)) for the six coordinates.
        let mut w = DMatrix::<f64>::zeros(9, 6);
        for k in 0..6 {
            let mut unit = Vector6::zeros();
            unit[k] = 1.0;
            let m = r * sym_from6(&unit);
            for i in 0..3 {
                for j in 0..3 {
                    w[(3 * i + j, k)] = m[(i, j)];
                }
            }
        }
        let f = deformation_gradient_from_rows(mesh, e, q);
        let rs = r * (sym_from6(&se) - mesh.frame_projector(e));
        let c = rs - f;

        // Stretch rows: v H Δs − v Wᵀ l = −v g.
        for i in 0..6 {
            for j in 0..6 {
                a[(off_s + 6 * e + i, off_s + 6 * e + j)] = v * ee.hess[(i, j)];
            }
            b[off_s + 6 * e + i] = -v * ee.grad[i];
            for k in 0..9 {
                a[(off_s + 6 * e + i, off_l + 9 * e + k)] = -v * w[(k, i)];
            }
        }
        // Multiplier rows: v(J Δq − W Δs) − v κ l = v c.
        let wtw = (w.transpose() * &w).try_inverse().ok_or("singular WᵀW")?;
        let p_skew = DMatrix::<f64>::identity(9, 9) - &w * wtw * w.transpose();
        let kappa = (DMatrix::<f64>::identity(9, 9) * tikhonov + p_skew * rotation_compliance) / mu;
        for k in 0..9 {
            let row = off_l + 9 * e + k;
            for col in 0..q.len() {
                let fi = free_index[col];
                if fi != usize::MAX && jac[(k, col)] != 0.0 {
                    a[(row, fi)] += v * jac[(k, col)];
                    a[(fi, row)] += v * jac[(k, col)];
                }
            }
            for i in 0..6 {
                a[(row, off_s + 6 * e + i)] = -v * w[(k, i)];
            }
            for kk in 0..9 {
                a[(row, off_l + 9 * e + kk)] = -v * kappa[(k, kk)];
            }
            b[row] = v * c[(k / 3, k % 3)];
        }
    }

    let x = a.lu().solve(&b).ok_or("dense KKT matrix is singular")?;
    Ok(DenseModelSolution {
        dq: x.rows(0, nf).into_owned(),
        ds: x.rows(off_s, 6 * ne).into_owned(),
        l: x.rows(off_l, 9 * ne).into_owned(),
    })
}

/// Neo-Hookean energy density in terms of `F`:
/// `μ/2 (tr FᵀF − 3) − μ ln J + λ/2 ln² J`.
fn nh_density(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Option<f64> {
    let j = f.determinant();
    if !(j > 0.0) {
        return None;
    }
    let lj = j.ln();
    Some(0.5 * mu * ((f.transpose() * f).trace() - 3.0) - mu * lj + 0.5 * lambda * lj * lj)
}

/// First Piola stress `μF − μF⁻ᵀ + λ ln J F⁻ᵀ` and its derivative
/// `∂P_ij/∂F_kl = μδ_ikδ_jl + (μ − λ ln J) F⁻¹_li F⁻¹_jk + λ F⁻¹_ji F⁻¹_lk`.
fn nh_stress(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Option<(Matrix3<f64>, DMatrix<f64>)> {
    let j = f.determinant();
    if !(j > 0.0) {
        return None;
    }
    let lj = j.ln();
    let fi = f.try_inverse()?;
    let fit = fi.transpose();
    let p = f * mu + fit * (lambda * lj - mu);
    let mut dp = DMatrix::zeros(9, 9);
    for i in 0..3 {
        for jj in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut v = (mu - lambda * lj) * fi[(l, i)] * fi[(jj, k)] + lambda * fi[(jj, i)] * fi[(l, k)];
                    if i == k && jj == l {
                        v += mu;
                    }
                    dp[(3 * i + jj, 3 * k + l)] = v;
                }
            }
        }
    }
    Some((p, dp))
}

/// Displacement-only neo-Hookean statics for a tet mesh: minimizes
/// `Σ dv ψ(F(q)) − f·q` over free vertices by damped Newton with a dense
/// Hessian and energy backtracking, ramping the load over `load_steps`.
pub struct StaticNewton<'a> {
    pub mesh: &'a SimMesh<f64>,
    pub mu: f64,
    pub lambda: f64,
    /// Per-coordinate external force, `3|V|`.
    pub force: Vec<f64>,
    pub pinned: Vec<usize>,
}

impl StaticNewton<'_> {
    pub fn energy(&self, q: &[f64], load: f64) -> Option<f64> {
        let mut e = 0.0;
        for el in 0..self.mesh.num_elements() {
            let f = deformation_gradient_from_rows(self.mesh, el, q);
            e += self.mesh.volume(el) * nh_density(&f, self.mu, self.lambda)?;
        }
        Some(e - load * self.force.iter().zip(q).map(|(f, x)| f * x).sum::<f64>())
    }

    /// Gradient and Hessian over all `3|V|` coordinates.
    pub fn derivatives(&self, q: &[f64], load: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = q.len();
        let mut g = DVector::from_iterator(n, self.force.iter().map(|f| -load * f));
        let mut hess = DMatrix::zeros(n, n);
        for el in 0..self.mesh.num_elements() {
            let v = self.mesh.volume(el);
            let f = deformation_gradient_from_rows(self.mesh, el, q);
            let (p, dp) = nh_stress(&f, self.mu, self.lambda)?;
            let verts = self.mesh.element(el);
            let grads = self.mesh.grad(el);
            // ∂F_ij/∂x_{a,i} = g_a[j]
            for (ai, &a) in verts.iter().enumerate() {
                for i in 0..3 {
                    let mut acc = 0.0;
                    for j in 0..3 {
                        acc += p[(i, j)] * grads[ai][j];
                    }
                    g[3 * a + i] += v * acc;
                }
            }
            for (ai, &a) in verts.iter().enumerate() {
                for (bi, &b) in verts.iter().enumerate() {
                    for i in 0..3 {
                        for k in 0..3 {
                            let mut acc = 0.0;
                            for j in 0..3 {
                                for l in 0..3 {
                                    acc += grads[ai][j] * dp[(3 * i + j, 3 * k + l)] * grads[bi][l];
                                }
                            }
                            hess[(3 * a + i, 3 * b + k)] += v * acc;
                        }
                    }
                }
            }
        }
        Some((g, hess))
    }

    /// Free coordinates (all three of every unpinned vertex).
    fn free(&self, n: usize) -> Vec<usize> {
        let mut pinned = vec![false; n / 3];
        for &p in &self.pinned {
            pinned[p] = true;
        }
        (0..n).filter(|&d| !pinned[d / 3]).collect()
    }

    /// Newton from `q0`; returns the equilibrium positions.
    pub fn solve(&self, q0: &[f64], load_steps: usize, tol: f64) -> Result<Vec<f64>, String> {
        let free = self.free(q0.len());
        let mut q = q0.to_vec();
        for stage in 1..=load_steps {
            let load = stage as f64 / load_steps as f64;
            let mut converged = false;
            for _ in 0..100 {
                let (g, h) = self.derivatives(&q, load).ok_or("inverted element")?;
                let gf = DVector::from_iterator(free.len(), free.iter().map(|&d| g[d]));
                if gf.amax() <= tol {
                    converged = true;
                    break;
                }
                let mut hf = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
                let mut shift = 0.0;
                let step = loop {
                    if let Some(ch) = hf.clone().cholesky() {
                        break -ch.solve(&gf);
                    }
                    let add = if shift == 0.0 { 1e-8 * hf.diagonal().amax() } else { shift * 9.0 };
                    for d in 0..free.len() {
                        hf[(d, d)] += add;
                    }
                    shift += add;
                };
                let e0 = self.energy(&q, load).ok_or("inverted element")?;
                let slope = gf.dot(&step);
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let mut trial = q.clone();
                    for (k, &d) in free.iter().enumerate() {
                        trial[d] += t * step[k];
                    }
                    if let Some(e) = self.energy(&trial, load) {
                        if e <= e0 + 1e-4 * t * slope || (e - e0).abs() <= 1e-14 * e0.abs().max(1.0) {
                            q = trial;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if !converged && stage == load_steps {
                let (g, _) = self.derivatives(&q, load).ok_or("inverted element")?;
                let res = free.iter().map(|&d| g[d].abs()).fold(0.0, f64::max);
                if res > tol * 1e3 {
                    return Err(format!("static Newton did not converge (gradient {res:.3e})"));
                }
            }
        }
        Ok(q)
    }
}

/// Best-fit rigid rotation of `x` onto `x0` (centroid-aligned Procrustes),
/// computed with an explicit SVD.
pub fn best_fit_rotation(x0: &[Vector3<f64>], x: &[Vector3<f64>]) -> Matrix3<f64> {
    let c0 = x0.iter().sum::<Vector3<f64>>() / x0.len() as f64;
    let c = x.iter().sum::<Vector3<f64>>() / x.len() as f64;
    let mut m = Matrix3::zeros();
    for (p0, p) in x0.iter().zip(x) {
        m += (p - c) * (p0 - c0).transpose();
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt
}

/// Element kind check shared by oracles that only make sense for volumes.
pub fn require_tets(mesh: &SimMesh<f64>) -> Result<(), String> {
    if mesh.kind() == ElementKind::Tet {
        Ok(())
    } else {
        Err(format!("expected a tet mesh, got {}", mesh.kind().name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{MaterialModel, MaterialParams};
    use crate::mesh::{box_tet_mesh, MeshOptions};
    use rand::SeedableRng;

    #[test]
    fn nh_oracle_derivatives_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f = Matrix3::identity() + random_matrix(&mut rng, 0.15);
        let (mu, lambda) = (2.0, 5.0);
        let x: Vec<f64> = f.transpose().iter().copied().collect();
        let as_mat = |x: &[f64]| Matrix3::from_row_slice(x);
        let g = fd_gradient(|x| nh_density(&as_mat(x), mu, lambda).unwrap(), &x, 1e-6);
        let (p, dp) = nh_stress(&f, mu, lambda).unwrap();
        for k in 0..9 {
            assert!((g[k] - p[(k / 3, k % 3)]).abs() < 1e-7);
        }
        let jac = fd_jacobian(
            |x| {
                let (p, _) = nh_stress(&as_mat(x), mu, lambda).unwrap();
                p.transpose().iter().copied().collect()
            },
            &x,
            1e-6,
        );
        assert!((jac - dp).amax() < 1e-6);
    }

    #[test]
    fn static_newton_gradient_is_consistent() {
        let (x, t) = box_tet_mesh::<f64>([2, 1, 1], Vector3::new(1.0, 0.5, 0.5), Vector3::zeros());
        let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
        let params = MaterialParams::new(MaterialModel::NeoHookean, 1000.0, 1e5, 0.3).unwrap();
        let oracle = StaticNewton {
            mesh: &mesh,
            mu: params.mu(),
            lambda: params.lambda(),
            force: vec![1.0; 3 * mesh.num_vertices()],
            pinned: vec![],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let q: Vec<f64> = mesh
            .rest_vector()
            .iter()
            .map(|x| x + 0.02 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (g, h) = oracle.derivatives(&q, 1.0).unwrap();
        let fd = fd_gradient(|x| oracle.energy(x, 1.0).unwrap(), &q, 1e-7);
        let scale = g.amax();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-5 * scale);
        }
        assert!((&h - h.transpose()).amax() < 1e-8 * h.amax());
    }
}
