//! Per-module oracle and invariant checks.

use super::criteria::tet_fixture;
use super::oracles::*;
use super::scenarios;
use super::{ensure, CheckResult, Context};
use crate::error::{MaterialError, MeshError, SceneError};
use crate::kinematics::{assemble_j, mat_to_vec9, sym_to_vec, symmat, w_block, VecMatCodec};
use crate::linsolve::{default_max_iterations, factor_preconditioner, solve_saddle, CgMethod, Matrix9, SaddleSystem};
use crate::materials::{self, MaterialModel, MaterialParams};
use crate::mesh::{box_tet_mesh, ElementKind, MeshOptions, SimMesh};
use crate::rotation::{local_target, polar_rotation};
use crate::scene::{build_projection, contact_force, lumped_mass, Ground, PinGroup, Scene};
use crate::solver::{local_step, Simulation, StepConfig};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

fn rng(ctx: &Context, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(ctx.seed.wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::from_fn(|_, _| gaussian(rng))).collect()
}

fn single(kind: ElementKind, x: Vec<Vector3<f64>>) -> Result<SimMesh<f64>, MeshError> {
    let n = x.len();
    SimMesh::new(kind, x, vec![(0..n).collect()], MeshOptions::default())
}

/// `Q G` for a single element: the deformation gradient of vertex matrix `Q`.
fn apply_rows(mesh: &SimMesh<f64>, x: &[Vector3<f64>]) -> Matrix3<f64> {
    let q: Vec<f64> = x.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    deformation_gradient_from_rows(mesh, 0, &q)
}

pub fn mesh_tet_volume(_ctx: &Context) -> CheckResult {
    // Regular tet with unit edges: volume 1/(6√2).
    let x = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
        Vector3::new(0.5, 3f64.sqrt() / 6.0, (2.0f64 / 3.0).sqrt()),
    ];
    let mesh = single(ElementKind::Tet, x).map_err(|e| e.to_string())?;
    let expect = 1.0 / (6.0 * 2f64.sqrt());
    let err = (mesh.volume(0) - expect).abs();
    ensure(err < 1e-14, || format!("volume {} vs {expect}", mesh.volume(0)))?;
    Ok(format!("regular tet volume error {err:.1e}"))
}

pub fn mesh_degenerate_rejected(_ctx: &Context) -> CheckResult {
    let flat = vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::new(0.3, 0.3, 0.0)];
    let tet = single(ElementKind::Tet, flat);
    ensure(matches!(tet, Err(MeshError::Degenerate { .. })), || format!("coplanar tet accepted: {tet:?}"))?;
    let line = vec![Vector3::zeros(), Vector3::x(), Vector3::new(2.0, 0.0, 0.0)];
    let tri = single(ElementKind::Tri, line);
    ensure(matches!(tri, Err(MeshError::Degenerate { .. })), || "collinear triangle accepted".into())?;
    let rod = single(ElementKind::Rod, vec![Vector3::x(), Vector3::x()]);
    ensure(matches!(rod, Err(MeshError::Degenerate { .. })), || "zero-length rod accepted".into())?;
    Ok("coplanar tet, collinear triangle and zero-length rod rejected".into())
}

/// Rigidly rotated rest tets map to exactly that rotation.
pub fn mesh_gradient_rotation(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_points(&mut rng, 4);
        let Ok(mesh) = single(ElementKind::Tet, x.clone()) else { continue };
        let r = random_rotation(&mut rng);
        let t = Vector3::from_fn(|_, _| gaussian(&mut rng));
        let moved: Vec<_> = mesh.rest_positions().iter().map(|p| r * p + t).collect();
        worst = worst.max((apply_rows(&mesh, &moved) - r).amax());
    }
    ensure(worst <= 1e-10, || format!("max |QG − R| {worst:.2e}"))?;
    Ok(format!("max |QG − R| {worst:.1e} over 100 tets"))
}

pub fn mesh_translation_invariance(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 12);
    let mut worst = 0.0f64;
    for kind in [ElementKind::Tet, ElementKind::Tri, ElementKind::Rod] {
        for _ in 0..20 {
            let Ok(mesh) = single(kind, random_points(&mut rng, kind.nodes())) else { continue };
            let sum: Vector3<f64> = mesh.grad(0).iter().sum();
            worst = worst.max(sum.amax());
        }
    }
    ensure(worst <= 1e-12, || format!("|Σ_v g_v| {worst:.2e}"))?;
    Ok(format!("max |Σ_v g_v| {worst:.1e}"))
}

/// A rest triangle maps onto its own plane: singular values `(1, 1, 0)`.
pub fn mesh_shell_singular_values(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 13);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_points(&mut rng, 3);
        let Ok(mesh) = single(ElementKind::Tri, x) else { continue };
        let f = apply_rows(&mesh, mesh.rest_positions());
        let mut sv: Vec<f64> = f.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        worst = worst.max((sv[0] - 1.0).abs()).max((sv[1] - 1.0).abs()).max(sv[2].abs());
        // Rest edges are fixed points.
        let r = mesh.rest_positions();
        for e in [r[1] - r[0], r[2] - r[0]] {
            worst = worst.max((f * e - e).amax());
        }
    }
    ensure(worst <= 1e-10, || format!("deviation {worst:.2e}"))?;
    Ok(format!("singular values (1, 1, 0) within {worst:.1e}"))
}

/// For a rod, `Q G = d dᵀ/|d|²` with `d` the rest edge; scaling the edge by
/// `k` scales that map by `k`.
pub fn mesh_rod_stretch(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 14);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_points(&mut rng, 2);
        let Ok(mesh) = single(ElementKind::Rod, x.clone()) else { continue };
        let d = x[1] - x[0];
        let k = 0.5 + rng.gen::<f64>();
        let stretched = vec![x[0], x[0] + d * k];
        let f = apply_rows(&mesh, &stretched);
        let expect = d * d.transpose() * (k / d.norm_squared());
        worst = worst.max((f - expect).amax());
    }
    ensure(worst <= 1e-10, || format!("deviation {worst:.2e}"))?;
    Ok(format!("rod stretch map within {worst:.1e}"))
}

/// The rod completion `N = n nᵀ + n′ n′ᵀ` is the projector orthogonal to the
/// edge, so it rotates with the rod even though the frame vectors need not.
pub fn mesh_rod_frame_equivariance(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 15);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_points(&mut rng, 2);
        let r = random_rotation(&mut rng);
        let (Ok(a), Ok(b)) = (
            single(ElementKind::Rod, x.clone()),
            single(ElementKind::Rod, x.iter().map(|p| r * p).collect()),
        ) else {
            continue;
        };
        let d = (x[1] - x[0]).normalize();
        let expect = Matrix3::identity() - d * d.transpose();
        worst = worst
            .max((a.frame_projector(0) - expect).amax())
            .max((b.frame_projector(0) - r * a.frame_projector(0) * r.transpose()).amax());
        let (n, m) = (a.ref_normal(0).unwrap(), a.ref_binormal(0).unwrap());
        worst = worst.max(n.dot(&d).abs()).max(m.dot(&d).abs()).max(n.dot(&m).abs());
    }
    ensure(worst <= 1e-12, || format!("deviation {worst:.2e}"))?;
    Ok(format!("rod completion rotates with the rod within {worst:.1e}"))
}

pub fn mesh_rigid_invariance(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 16);
    let mut worst = 0.0f64;
    for kind in [ElementKind::Tet, ElementKind::Tri, ElementKind::Rod] {
        for _ in 0..20 {
            let x = random_points(&mut rng, kind.nodes());
            let r = random_rotation(&mut rng);
            let t = Vector3::from_fn(|_, _| gaussian(&mut rng));
            let (Ok(a), Ok(b)) = (single(kind, x.clone()), single(kind, x.iter().map(|p| r * p + t).collect())) else {
                continue;
            };
            worst = worst.max((a.volume(0) - b.volume(0)).abs() / a.volume(0));
        }
    }
    ensure(worst <= 1e-12, || format!("relative measure change {worst:.2e}"))?;
    Ok(format!("measures rigid-invariant within {worst:.1e}"))
}

pub fn kinematics_codec_round_trip(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 21);
    let codec = VecMatCodec::<f64>::new();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_matrix(&mut rng, 1.0);
        let m = (a + a.transpose()) * 0.5;
        // C:M counts each off-diagonal entry twice; halving the shear slots
        // recovers the 6-vector.
        let dm = DMatrix::from_fn(3, 3, |r, c| m[(r, c)]);
        let mut c = codec.c.contract_mat(&dm);
        for k in 3..6 {
            c[k] *= 0.5;
        }
        let back = symmat(&Vector6::from_column_slice(c.as_slice()));
        worst = worst.max((back - m).amax());
        worst = worst.max((symmat(&sym_to_vec(&m)) - m).amax());
        worst = worst.max((sym_from6(&sym_to_vec(&m)) - m).amax());
    }
    ensure(worst <= 1e-14, || format!("round trip error {worst:.2e}"))?;
    Ok(format!("symmat(C:M) round trip within {worst:.1e}"))
}

pub fn kinematics_rigid_rotation(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 22);
    let (x, t) = box_tet_mesh::<f64>([2, 2, 2], Vector3::repeat(1.0), Vector3::zeros());
    let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).map_err(|e| e.to_string())?;
    let j = assemble_j(&mesh);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let r = random_rotation(&mut rng);
        let q: Vec<f64> = mesh.rest_positions().iter().flat_map(|p| (r * p).as_slice().to_vec()).collect();
        let jq = j.mul_vec(&q);
        let vr = mat_to_vec9(&r);
        for e in 0..mesh.num_elements() {
            for k in 0..9 {
                worst = worst.max((jq[9 * e + k] - vr[k]).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("|Jq − vec(R)| {worst:.2e}"))?;
    Ok(format!("J of a rigid rotation is vec(R) per element within {worst:.1e}"))
}

/// `W` against the four-index contraction `Z:R` and against `vec(R symmat(s))`.
pub fn kinematics_w_tensor(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 23);
    let codec = VecMatCodec::<f64>::new();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let r = random_rotation(&mut rng);
        let explicit = codec.z.contract_mat(&DMatrix::from_fn(3, 3, |a, b| r[(a, b)]));
        let w = w_block(&r);
        for i in 0..9 {
            for k in 0..6 {
                worst = worst.max((explicit[(i, k)] - w[(i, k)]).abs());
            }
        }
        let s = Vector6::from_fn(|_, _| gaussian(&mut rng));
        let direct = r * sym_from6(&s);
        let ws = w * s;
        for a in 0..3 {
            for b in 0..3 {
                worst = worst.max((ws[3 * a + b] - direct[(a, b)]).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("W deviation {worst:.2e}"))?;
    Ok(format!("W = Z:R = vec(R symmat(·)) within {worst:.1e}"))
}

fn all_models() -> [MaterialModel; 3] {
    [MaterialModel::Arap, MaterialModel::Corot, MaterialModel::NeoHookean]
}

pub fn materials_rest_stability(_ctx: &Context) -> CheckResult {
    let rest = Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
    for model in all_models() {
        let p = MaterialParams::new(model, 1000.0, 1e6, 0.45).map_err(|e| e.to_string())?;
        let psi: f64 = materials::energy(&rest, &p).map_err(|e| e.to_string())?;
        let g = materials::gradient(&rest, &p).map_err(|e| e.to_string())?;
        ensure(psi.abs() <= 1e-9 && g.amax() <= 1e-9, || format!("{model}: ψ(I) = {psi:e}, |∇ψ(I)| = {:e}", g.amax()))?;
    }
    let bad = MaterialParams::new(MaterialModel::NeoHookean, 1000.0, 1e6, 0.5);
    ensure(matches!(bad, Err(MaterialError::InvalidParams(_))), || "ν = 0.5 accepted".into())?;
    let nh = MaterialParams::new(MaterialModel::NeoHookean, 1000.0, 1e6, 0.3).unwrap();
    let inverted = materials::energy(&Vector6::new(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0), &nh);
    ensure(matches!(inverted, Err(MaterialError::Inverted { .. })), || "inverted S accepted by NH".into())?;
    Ok("ψ(I) = 0 and ∇ψ(I) = 0 for all models; ν = 0.5 and det S ≤ 0 rejected".into())
}

pub fn materials_isotropy(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 31);
    let mut worst = 0.0f64;
    for model in all_models() {
        let p = MaterialParams::new(model, 1000.0, 1e5, 0.4).unwrap();
        for _ in 0..30 {
            let s = random_stretch(&mut rng, 0.3, 0.2);
            let r = random_rotation(&mut rng);
            let rotated = r * sym_from6(&s) * r.transpose();
            let a = materials::energy(&s, &p).map_err(|e| e.to_string())?;
            let b = materials::energy(&sym_to_vec(&rotated), &p).map_err(|e| e.to_string())?;
            worst = worst.max((a - b).abs() / a.abs().max(p.mu() * 1e-12));
        }
    }
    ensure(worst <= 1e-10, || format!("relative change {worst:.2e}"))?;
    Ok(format!("ψ(S) = ψ(RSRᵀ) within {worst:.1e}"))
}

pub fn materials_arap_hessian(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 32);
    let p = MaterialParams::new(MaterialModel::Arap, 1000.0, 1e5, 0.4).unwrap();
    let h0 = materials::hessian(&Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0), &p, false).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s = random_stretch(&mut rng, 0.5, 0.1);
        worst = worst.max((materials::hessian(&s, &p, false).unwrap() - h0).amax());
    }
    ensure(worst <= 1e-8, || format!("ARAP Hessian varies by {worst:.2e}"))?;
    Ok(format!("ARAP Hessian constant within {worst:.1e}"))
}

pub fn materials_spd_projection(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 33);
    let p = MaterialParams::new(MaterialModel::NeoHookean, 1000.0, 1e5, 0.45).unwrap();
    let mut min_eig = f64::INFINITY;
    for _ in 0..50 {
        // Strongly compressed and sheared states, where NH loses convexity.
        let s = random_stretch(&mut rng, 1.2, 0.05);
        let h = materials::hessian(&s, &p, true).map_err(|e| e.to_string())?;
        min_eig = min_eig.min(h.symmetric_eigen().eigenvalues.min());
    }
    let floor = p.spd_floor();
    ensure(min_eig >= floor - 1e-12 * p.lambda(), || format!("projected eigenvalue {min_eig:e} below floor {floor:e}"))?;
    Ok(format!("projected Hessians have eigenvalues ≥ {min_eig:.3e} (floor {floor:.1e})"))
}

pub fn rotation_known_factor(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 41);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let s = sym_from6(&random_stretch(&mut rng, 0.4, 0.2));
        worst = worst.max((polar_rotation(&(r * s)) - r).amax());
    }
    ensure(worst <= 1e-10, || format!("deviation {worst:.2e}"))?;
    let id = (polar_rotation(&Matrix3::<f64>::identity()) - Matrix3::identity()).amax();
    ensure(id <= 1e-14, || "polar(I) ≠ I".into())?;
    Ok(format!("polar(R S) = R within {worst:.1e}"))
}

pub fn rotation_equivariance(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 42);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = random_matrix(&mut rng, 1.0);
        let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
        worst = worst.max((polar_rotation(&(a * m * b)) - a * polar_rotation(&m) * b).amax());
    }
    ensure(worst <= 1e-9, || format!("deviation {worst:.2e}"))?;
    Ok(format!("polar(A M B) = A polar(M) B within {worst:.1e}"))
}

/// A small free tet mesh with its production operators.
fn linsolve_fixture(seed: u64, cells: [usize; 3]) -> (SaddleSystem<f64>, crate::linsolve::ConstantPreconditioner<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, t) = box_tet_mesh::<f64>(cells, Vector3::new(1.0, 0.8, 0.6), Vector3::zeros());
    let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
    let params = MaterialParams::new(MaterialModel::NeoHookean, 1000.0, 1e5, 0.4).unwrap();
    let mu = params.mu();
    let h = 0.01;
    let mass: Vec<f64> = lumped_mass(&mesh, params.density).unwrap().iter().map(|m| m / (h * h)).collect();
    let mut j = assemble_j(&mesh);
    j.scale_rows(|r| mesh.volume(r / 9));
    let (j, jt) = (Arc::new(j.clone()), Arc::new(j.transpose()));
    let precond = factor_preconditioner(mass.clone(), j.clone(), jt.clone(), mu, mesh.volumes(), 1e-6).unwrap();
    let compliance: Vec<Matrix9<f64>> = (0..mesh.num_elements())
        .map(|e| {
            let w = w_block(&random_rotation(&mut rng));
            let s = random_stretch(&mut rng, 0.2, 0.5);
            let hinv = materials::hessian(&s, &params, true).unwrap().try_inverse().unwrap();
            (w * hinv * w.transpose() + Matrix9::identity() * (1e-2 / mu)) * mesh.volume(e)
        })
        .collect();
    let weights = vec![1.0; mesh.num_elements()];
    let system = SaddleSystem::new(mass, j, jt, compliance, weights);
    let rhs: Vec<f64> = (0..system.dim()).map(|_| gaussian(&mut rng)).collect();
    (system, precond, rhs)
}

pub fn linsolve_preconditioner_dense(ctx: &Context) -> CheckResult {
    let (_, precond, rhs) = linsolve_fixture(ctx.seed, [1, 1, 1]);
    let dense = precond.dense_matrix();
    let x = precond.apply(&rhs);
    let expect = dense.lu().solve(&DVector::from_column_slice(&rhs)).ok_or("singular preconditioner")?;
    let err = rel_err(&x, expect.as_slice());
    ensure(err <= 1e-10, || format!("relative error {err:.2e}"))?;
    Ok(format!("factored preconditioner solve vs dense LU: {err:.1e}"))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

pub fn linsolve_pcg_dense(ctx: &Context) -> CheckResult {
    let mut worst = 0.0f64;
    for cells in [[1, 1, 1], [2, 1, 1]] {
        let (system, precond, rhs) = linsolve_fixture(ctx.seed ^ 7, cells);
        let expect = system
            .to_dense()
            .lu()
            .solve(&DVector::from_column_slice(&rhs))
            .ok_or("singular saddle matrix")?;
        for method in [CgMethod::Saddle, CgMethod::Schur] {
            let res = solve_saddle(&system, &rhs, &precond, None, 1e-12, 4 * system.dim(), method)
                .map_err(|e| e.to_string())?;
            let x = [res.dq, res.l].concat();
            worst = worst.max(rel_err(&x, expect.as_slice()));
        }
    }
    ensure(worst <= 1e-6, || format!("relative error {worst:.2e}"))?;
    Ok(format!("both CG variants match dense LU within {worst:.1e}"))
}

pub fn linsolve_symmetry(ctx: &Context) -> CheckResult {
    let (system, precond, _) = linsolve_fixture(ctx.seed ^ 9, [2, 1, 1]);
    let a = system.to_dense();
    let p = precond.dense_matrix();
    let sa = (&a - a.transpose()).amax() / a.amax();
    let sp = (&p - p.transpose()).amax() / p.amax();
    ensure(sa <= 1e-14 && sp <= 1e-14, || format!("asymmetry system {sa:.1e}, preconditioner {sp:.1e}"))?;
    Ok(format!("system and preconditioner symmetric (asymmetry {sa:.1e}, {sp:.1e})"))
}

pub fn linsolve_residual_contract(ctx: &Context) -> CheckResult {
    let (system, precond, rhs) = linsolve_fixture(ctx.seed ^ 11, [2, 1, 1]);
    let tol = 1e-8;
    let mut parts = Vec::new();
    for method in [CgMethod::Saddle, CgMethod::Schur] {
        let res = solve_saddle(&system, &rhs, &precond, None, tol, default_max_iterations(system.dim()), method)
            .map_err(|e| e.to_string())?;
        let x = [res.dq.clone(), res.l.clone()].concat();
        let ax = system.apply(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
        let achieved = system.residual_norm(&r) / system.residual_norm(&rhs);
        ensure(res.converged && achieved <= tol * 1.0001, || {
            format!("{method:?}: converged {} with weighted residual {achieved:.2e} (tol {tol:e})", res.converged)
        })?;
        parts.push(format!("{method:?} {} iterations, residual {achieved:.1e}", res.iterations));
    }
    Ok(format!("{} (tol {tol:.0e})", parts.join(", ")))
}

/// At a consistent rest state with `l = 0` every right-hand side vanishes.
pub fn solver_consistent_rhs_zero(ctx: &Context) -> CheckResult {
    let mut rng = rng(ctx, 51);
    let mut worst = 0.0f64;
    for model in all_models() {
        let scene = scenarios::rest_cube(model, 1);
        let mut sim = Simulation::new(scene, StepConfig::default()).map_err(|e| e.to_string())?;
        // Rigidly rotated and translated, moving with zero acceleration.
        let r = random_rotation(&mut rng);
        let t = Vector3::from_fn(|_, _| gaussian(&mut rng));
        let mut state = sim.state().clone();
        let q: Vec<f64> = sim.mesh().rest_positions().iter().flat_map(|p| (r * p + t).as_slice().to_vec()).collect();
        state.q = q.clone();
        state.q_prev = q.clone();
        state.rotations = vec![r; sim.mesh().num_elements()];
        sim.set_state(state.clone());
        let model_q = sim.quadratic_model(&q, &state.s).map_err(|e| e.to_string())?;
        let (_, rhs) = sim.assemble_global(&model_q, &q, &state.s, &state.rotations);
        worst = worst.max(rhs.iter().fold(0.0, |a, b| a.max(b.abs())));
    }
    ensure(worst <= 1e-10, || format!("|rhs| {worst:.2e}"))?;
    Ok(format!("rigidly placed rest state has rhs within {worst:.1e}"))
}

pub fn solver_local_step_maximality(ctx: &Context) -> CheckResult {
    let fx = tet_fixture(MaterialModel::NeoHookean, ctx.seed ^ 3, StepConfig::default());
    let mesh = fx.sim.mesh();
    let mut rng = rng(ctx, 52);
    let l: Vec<f64> = (0..9).map(|_| 1e4 * gaussian(&mut rng)).collect();
    let mut rotations = fx.rotations.clone();
    let mut beta = vec![0.0];
    let mu = fx.sim.scene().material.mu();
    local_step(mesh, &fx.q, &fx.s, &l, &mut rotations, &mut beta, 10.0, mu);
    let lam = Matrix3::from_row_slice(&l);
    let f = mesh.deformation_gradient(0, &fx.q);
    let target = local_target(&lam, beta[0], &f, &sym_from6(&Vector6::from_column_slice(&fx.s)), &mesh.frame_projector(0));
    let samples: Vec<_> = (0..10_000).map(|_| random_rotation(&mut rng)).collect();
    let margin = procrustes_margin(&rotations[0], &target, &samples);
    let expected_beta = (10.0 * lam.norm()).max(mu);
    ensure(margin >= -1e-9, || format!("margin {margin:e}"))?;
    ensure((beta[0] - expected_beta).abs() <= 1e-9 * expected_beta, || format!("β = {} vs {expected_beta}", beta[0]))?;
    Ok(format!("local step maximizes its objective (margin {margin:.2e}), β = max(α‖λ‖, μ)"))
}

/// The quadratic model's position and stretch gradients agree with finite
/// differences of the incremental potential.
pub fn solver_merit_gradient(ctx: &Context) -> CheckResult {
    let fx = tet_fixture(MaterialModel::NeoHookean, ctx.seed ^ 5, StepConfig::default());
    let sim = &fx.sim;
    let model = sim.quadratic_model(&fx.q, &fx.s).map_err(|e| e.to_string())?;
    let fd_q = fd_gradient(|x| sim.incremental_potential(x, &fx.s).unwrap(), &fx.q, 1e-6);
    let fd_s = fd_gradient(|x| sim.incremental_potential(&fx.q, x).unwrap(), &fx.s, 1e-7);
    let neg_rhs: Vec<f64> = model.rhs_q.iter().map(|v| -v).collect();
    let free = sim.projection().project(&fd_q);
    let eq = rel_err(&neg_rhs, &free);
    let g: Vec<f64> = model.grad[0].iter().map(|v| v * sim.mesh().volume(0)).collect();
    let es = rel_err(&g, &fd_s);
    ensure(eq <= 1e-6 && es <= 1e-6, || format!("position {eq:.2e}, stretch {es:.2e}"))?;
    Ok(format!("model gradients vs finite differences: q {eq:.1e}, s {es:.1e}"))
}

/// Static pins never move; a scripted pin sits at `x₀ + k h v` after `k` steps.
pub fn solver_pins_exact(_ctx: &Context) -> CheckResult {
    let (x, t) = box_tet_mesh::<f64>([2, 1, 1], Vector3::new(1.0, 0.5, 0.5), Vector3::zeros());
    let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
    let params = MaterialParams::new(MaterialModel::Corot, 1000.0, 1e5, 0.4).unwrap();
    let v = Vector3::new(0.0, 0.1, 0.05);
    let scene = Scene::new(mesh, params).with_gravity(scenarios::GRAVITY);
    let fixed = scene.select_vertices(Vector3::repeat(-1.0), Vector3::new(1e-9, 2.0, 2.0));
    let moving = scene.select_vertices(Vector3::new(1.0 - 1e-9, -1.0, -1.0), Vector3::repeat(2.0));
    let scene = scene.with_pins(vec![PinGroup::fixed(fixed.clone()), PinGroup::moving(moving.clone(), v)]);
    let x0 = scene.initial_positions.clone();
    let mut sim = Simulation::new(scene, StepConfig::default()).map_err(|e| e.to_string())?;
    let h = sim.config().h;
    for k in 1..=20 {
        sim.step().map_err(|e| e.to_string())?;
        for &p in &fixed {
            ensure(sim.state().position(p) == x0[p], || format!("static pin {p} moved at step {k}"))?;
        }
        for &p in &moving {
            let expect = x0[p] + v * (k as f64 * h);
            let err = (sim.state().position(p) - expect).amax();
            ensure(err <= 1e-12, || format!("scripted pin {p} off by {err:e} at step {k}"))?;
        }
    }
    Ok("static pins exact, scripted pins at x₀ + k·h·v over 20 steps".into())
}

pub fn scene_projection(_ctx: &Context) -> CheckResult {
    let p = build_projection(&[1, 3], 5).map_err(|e| e.to_string())?;
    ensure(p.num_free() == 9, || format!("free dimension {}", p.num_free()))?;
    let q: Vec<f64> = (0..15).map(|k| k as f64).collect();
    let once = p.project(&q);
    let again = p.project(&p.unproject(&once, &q));
    ensure(once == again, || "project ∘ unproject ∘ project ≠ project".into())?;
    ensure(p.unproject(&once, &q) == q, || "round trip lost pinned coordinates".into())?;
    let identity = build_projection(&[], 2).map_err(|e| e.to_string())?;
    ensure(identity.project(&q[..6]) == q[..6].to_vec(), || "no pins is not the identity".into())?;
    ensure(matches!(build_projection(&[5], 5), Err(SceneError::PinIndex { .. })), || "out-of-range pin accepted".into())?;
    Ok("projection idempotent, identity without pins, bad index rejected".into())
}

pub fn scene_contact_law(_ctx: &Context) -> CheckResult {
    let ground = Ground::new(0.0, 1e4, 0.0);
    let q = [0.0f64, 0.5, 0.0, 1.0, -0.01, 2.0];
    let f = contact_force(&q, None, &ground);
    ensure(f[..3] == [0.0; 3], || "force above plane".into())?;
    ensure((f[4] - 100.0).abs() < 1e-9 && f[3] == 0.0 && f[5] == 0.0, || format!("force {:?}", &f[3..]))?;
    let damped = contact_force(&q, Some(&[0.0, 0.0, 0.0, 0.0, -2.0, 0.0]), &Ground::new(0.0, 1e4, 10.0));
    ensure((damped[4] - 120.0).abs() < 1e-9, || format!("damped force {}", damped[4]))?;
    Ok("zero above plane, k·d upward below, damping opposes normal velocity".into())
}

pub fn scene_mass_lumping(_ctx: &Context) -> CheckResult {
    // Unit-volume tet.
    let x = vec![Vector3::zeros(), Vector3::new(6f64.cbrt(), 0.0, 0.0), Vector3::new(0.0, 6f64.cbrt(), 0.0), Vector3::new(0.0, 0.0, 6f64.cbrt())];
    let mesh = single(ElementKind::Tet, x).map_err(|e| e.to_string())?;
    let m = lumped_mass(&mesh, 1000.0).map_err(|e| e.to_string())?;
    ensure(m.iter().all(|&v| (v - 250.0).abs() < 1e-9), || format!("lumped masses {m:?}"))?;

    let total = |cells: usize| {
        let (x, t) = box_tet_mesh::<f64>([cells; 3], Vector3::new(1.0, 0.7, 0.4), Vector3::zeros());
        let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
        lumped_mass(&mesh, 1000.0).unwrap().iter().sum::<f64>() / 3.0
    };
    let (coarse, fine) = (total(2), total(4));
    let rel = (coarse - fine).abs() / fine;
    ensure(rel <= 1e-10, || format!("refinement changes total mass by {rel:e}"))?;
    ensure(lumped_mass(&mesh, 0.0).is_err(), || "ρ = 0 accepted".into())?;
    Ok(format!("250 kg per vertex of a unit tet; refinement invariance {rel:.1e}"))
}

/// A soft cube settles on the ground with total contact force equal to its
/// weight and penetration no larger than `m g / k`.
pub fn scene_settled_penetration(_ctx: &Context) -> CheckResult {
    let (x, t) = box_tet_mesh::<f64>([2, 2, 2], Vector3::repeat(0.2), Vector3::new(0.0, 0.02, 0.0));
    let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
    let params = MaterialParams::new(MaterialModel::NeoHookean, 1000.0, 1e5, 0.3).unwrap();
    let k = 1e4;
    let scene = Scene::new(mesh, params)
        .with_gravity(scenarios::GRAVITY)
        .with_ground(Ground::new(0.0, k, 10.0));
    let mut sim = Simulation::new(scene, StepConfig::converged(0.01)).map_err(|e| e.to_string())?;
    let (steps, last) = scenarios::settle(&mut sim, 1e-10, 3000)?;
    let weight = sim.mass().iter().sum::<f64>() / 3.0 * 9.81;
    let pen: Vec<f64> = sim.state().q.chunks(3).map(|p| (-p[1]).max(0.0)).collect();
    let support: f64 = pen.iter().map(|d| k * d).sum();
    let max_pen = pen.iter().copied().fold(0.0, f64::max);
    let bound = weight / k;
    let balance = (support - weight).abs() / weight;
    ensure(balance <= 0.1 && max_pen <= bound * 1.1, || {
        format!("support {support:.4} N vs weight {weight:.4} N, max penetration {max_pen:.3e} vs bound {bound:.3e} ({steps} steps, last move {last:.1e})")
    })?;
    Ok(format!(
        "support/weight − 1 = {balance:.1e}, max penetration {max_pen:.3e} ≤ m g/k = {bound:.3e} ({steps} steps)"
    ))
}
