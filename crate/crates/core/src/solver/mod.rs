//! The time integrator.
//!
//! One step of backward Euler is the minimization of
//! `E(q) = 1/(2h²) aᵀ M a + Σ dv ψ − f·q` with `a = q − 2qᵗ + qᵗ⁻¹`. In mixed
//! form the stretches `s` are independent unknowns tied to positions by the
//! per-element constraint
//!
//! ```text
//! c_e = R_e S_e − F_e − R_e N_e = 0
//! ```
//!
//! where `N_e` completes rank-deficient shell and rod gradients (zero for
//! tets). Each outer iteration builds the quadratic model of the Lagrangian at
//! the current `(q, s)` and runs inner iterations that alternate
//!
//! 1. the local step: `R_e ← argmax ⟨R, (λ_e/β_e + F_e)(S_e − N_e)ᵀ⟩`,
//! 2. the global step: the saddle system of the model with `R` fixed, solved
//!    for `(Δq, l)` by preconditioned CG, then `Δs = H⁻¹(Wᵀ l − g)`.
//!
//! # Sign conventions
//!
//! With `L = E − Σ dv lᵀ c` and `W_e s = vec(R_e symmat(s))` the model's
//! stationarity conditions are
//!
//! ```text
//! (M/h²) Δq + J̃ᵀ l                    = −(M/h²) a + f
//! J̃ Δq − dv W H⁻¹ Wᵀ l                 = dv (W s − J q − vec(R N) − W H⁻¹ g)
//! Δs                                  = H⁻¹ (Wᵀ l − g)
//! ```
//!
//! with `J̃ = dv J`. The minus in front of `W H⁻¹ g` follows directly from
//! eliminating `Δs`; the dense single-element oracle in the validation suite
//! pins all of these signs.

mod config;
mod stats;

pub use config::StepConfig;
pub use stats::{StepStats, SubstepStats};

use crate::error::{MaterialError, SceneError, StepError};
use crate::kinematics::{mat_to_vec9, symmat, sym_to_vec, w_block, Matrix9x6, Vector9};
use crate::linsolve::{default_max_iterations, factor_preconditioner, solve_saddle, ConstantPreconditioner, Matrix9, PcgResult, SaddleSystem};
use crate::materials;
use crate::mesh::{ElementKind, SimMesh};
use crate::real::Real;
use crate::rotation::{local_target, polar_rotation};
use crate::scene::{contact_energy, contact_terms, lumped_mass, DofProjection, Scene};
use crate::sparse::CsrMatrix;
use crate::kinematics::assemble_j;
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use std::sync::Arc;
use std::time::Instant;

/// Positions, stretches, multipliers and rotations of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T: Real> {
    /// Positions `qᵗ`, `3|V|`.
    pub q: Vec<T>,
    /// Positions one step earlier, `qᵗ⁻¹`.
    pub q_prev: Vec<T>,
    /// Symmetric stretches, `6|T|`.
    pub s: Vec<T>,
    /// Multipliers (stresses, Pa), `9|T|`.
    pub l: Vec<T>,
    pub rotations: Vec<Matrix3<T>>,
    /// Per-element penalty `β` of the last local step, Pa.
    pub beta: Vec<T>,
    pub time: T,
    pub step: usize,
}

impl<T: Real> SolverState<T> {
    /// Undeformed and motionless.
    pub fn at_rest(mesh: &SimMesh<T>) -> Self {
        let q: Vec<T> = mesh.rest_vector().as_slice().to_vec();
        let ne = mesh.num_elements();
        let mut s = vec![T::zero(); 6 * ne];
        for e in 0..ne {
            s[6 * e..6 * e + 3].fill(T::one());
        }
        Self {
            q_prev: q.clone(),
            q,
            s,
            l: vec![T::zero(); 9 * ne],
            rotations: vec![Matrix3::identity(); ne],
            beta: vec![T::zero(); ne],
            time: T::zero(),
            step: 0,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.q.len() / 3
    }

    pub fn position(&self, v: usize) -> Vector3<T> {
        Vector3::new(self.q[3 * v], self.q[3 * v + 1], self.q[3 * v + 2])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.s).chain(&self.l).all(|v| v.is_finite())
            && self.rotations.iter().all(|r| r.iter().all(|v| v.is_finite()))
    }
}

/// Forward-Euler predictor `2qᵗ − qᵗ⁻¹ + h² M⁻¹ f_ext`.
pub fn warm_start<T: Real>(state: &SolverState<T>, external_force: &[T], mass: &[T], h: T) -> Vec<T> {
    let h2 = h * h;
    state
        .q
        .iter()
        .zip(&state.q_prev)
        .zip(external_force.iter().zip(mass))
        .map(|((&q, &qp), (&f, &m))| q + q - qp + h2 * f / m)
        .collect()
}

/// The local step: per-element Procrustes fit of `(λ/β + F)(S − N)ᵀ` with
/// `β_e = max(α‖l_e‖, β_floor)`. Updates `rotations` and `beta` in place and
/// returns the largest rotation change (Frobenius norm).
pub fn local_step<T: Real>(
    mesh: &SimMesh<T>,
    q: &[T],
    s: &[T],
    l: &[T],
    rotations: &mut [Matrix3<T>],
    beta: &mut [T],
    alpha: T,
    beta_floor: T,
) -> T {
    rotations
        .par_iter_mut()
        .zip(beta.par_iter_mut())
        .enumerate()
        .map(|(e, (r, b))| {
            let le = Vector9::from_column_slice(&l[9 * e..9 * e + 9]);
            let lambda = crate::kinematics::matvec9(&le);
            let norm = le.norm();
            *b = if alpha * norm > beta_floor { alpha * norm } else { beta_floor };
            let f = mesh.deformation_gradient(e, q);
            let se = symmat(&Vector6::from_column_slice(&s[6 * e..6 * e + 6]));
            let target = local_target(&lambda, *b, &f, &se, &mesh.frame_projector(e));
            let next = polar_rotation(&target);
            let change = (next - *r).norm();
            *r = next;
            change
        })
        .collect::<Vec<T>>()
        .into_iter()
        .fold(T::zero(), |a, c| if c > a { c } else { a })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch<T> {
    /// Accepted step length, `0` on stagnation.
    pub t: T,
    pub merit0: T,
    pub merit: T,
    pub backtracks: usize,
    pub stagnated: bool,
}

/// Backtracking on `t ∈ {1, s, s², …}` for at most `max_backtracks` halvings.
/// `merit(t)` returns `None` where the merit is undefined (an inverted
/// neo-Hookean element); such trials are rejected like increases.
pub fn line_search<T: Real>(
    merit0: T,
    mut merit: impl FnMut(T) -> Option<T>,
    shrink: T,
    max_backtracks: usize,
) -> LineSearch<T> {
    let mut t = T::one();
    for k in 0..=max_backtracks {
        if let Some(m) = merit(t) {
            if m.is_finite() && m <= merit0 {
                return LineSearch {
                    t,
                    merit0,
                    merit: m,
                    backtracks: k,
                    stagnated: false,
                };
            }
        }
        t *= shrink;
    }
    LineSearch {
        t: T::zero(),
        merit0,
        merit: merit0,
        backtracks: max_backtracks,
        stagnated: true,
    }
}

/// Element energies and the free-DOF parts of the position rows of the
/// quadratic model at a linearization point.
#[derive(Debug, Clone)]
pub struct QuadraticModel<T: Real> {
    pub psi: Vec<T>,
    pub grad: Vec<Vector6<T>>,
    pub hess: Vec<Matrix6<T>>,
    pub hess_inv: Vec<Matrix6<T>>,
    /// Diagonal `M/h²` plus contact stiffness on free DOFs.
    pub mass_block: Vec<T>,
    /// `−(M/h²) a + f_ext − ∇E_contact` on free DOFs.
    pub rhs_q: Vec<T>,
}

/// Result of one global step at fixed rotations.
#[derive(Debug, Clone)]
pub struct GlobalSolution<T> {
    /// Increment on free DOFs.
    pub dq: Vec<T>,
    pub ds: Vec<T>,
    pub l: Vec<T>,
    pub iterations: usize,
    pub residual: T,
    pub converged: bool,
}

/// A mesh with its scene, solver settings and current state.
pub struct Simulation<T: Real> {
    scene: Scene<T>,
    config: StepConfig<T>,
    projection: DofProjection,
    mass: Vec<T>,
    f_ext: Vec<T>,
    j_free: Arc<CsrMatrix<T>>,
    jt_free: Arc<CsrMatrix<T>>,
    precond: Arc<ConstantPreconditioner<T>>,
    residual_weights: Vec<T>,
    state: SolverState<T>,
    rhs_sign_mutation: bool,
}

impl<T: Real> std::fmt::Debug for Simulation<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("kind", &self.scene.mesh.kind())
            .field("vertices", &self.scene.mesh.num_vertices())
            .field("elements", &self.scene.mesh.num_elements())
            .field("free_dofs", &self.projection.num_free())
            .field("config", &self.config)
            .finish()
    }
}

impl<T: Real> Simulation<T> {
    /// Assembles the constant operators and factors the preconditioner.
    pub fn new(scene: Scene<T>, config: StepConfig<T>) -> Result<Self, SceneError> {
        config.validate()?;
        scene.material.validate()?;
        let mesh = scene.mesh.clone();
        let nv = mesh.num_vertices();
        if scene.initial_positions.len() != nv {
            return Err(SceneError::Field {
                field: "initial_positions".into(),
                message: format!("expected {nv} positions, got {}", scene.initial_positions.len()),
            });
        }
        let projection = DofProjection::new(&scene.pinned_vertices(), nv)?;
        let mass = lumped_mass(&mesh, scene.material.density)?;
        let f_ext: Vec<T> = mass.iter().enumerate().map(|(i, &m)| m * scene.gravity[i % 3]).collect();

        let mut j = assemble_j(&mesh).select_columns(projection.free_dofs());
        j.scale_rows(|r| mesh.volume(r / 9));
        let j_free = Arc::new(j);
        let jt_free = Arc::new(j_free.transpose());

        let h = config.h;
        let inv_h2 = T::one() / (h * h);
        let mass_free: Vec<T> = projection.project(&mass).into_iter().map(|m| m * inv_h2).collect();
        let mu = scene.material.mu();
        let precond = factor_preconditioner(
            mass_free,
            j_free.clone(),
            jt_free.clone(),
            mu,
            mesh.volumes(),
            config.tikhonov,
        )?;
        let residual_weights = mesh.volumes().iter().map(|&v| mu / v.cbrt()).collect();
        let state = initial_state(&scene, h);

        Ok(Self {
            scene,
            config,
            projection,
            mass,
            f_ext,
            j_free,
            jt_free,
            precond: Arc::new(precond),
            residual_weights,
            state,
            rhs_sign_mutation: false,
        })
    }

    pub fn scene(&self) -> &Scene<T> {
        &self.scene
    }

    pub fn mesh(&self) -> &SimMesh<T> {
        &self.scene.mesh
    }

    pub fn config(&self) -> &StepConfig<T> {
        &self.config
    }

    /// Changes iteration settings. The timestep and Tikhonov shift are baked
    /// into the preconditioner and must stay the same.
    pub fn set_config(&mut self, config: StepConfig<T>) -> Result<(), SceneError> {
        config.validate()?;
        if config.h != self.config.h || config.tikhonov != self.config.tikhonov {
            return Err(SceneError::Field {
                field: "solver.h".into(),
                message: "timestep and tikhonov are fixed when the simulation is created".into(),
            });
        }
        self.config = config;
        Ok(())
    }

    pub fn state(&self) -> &SolverState<T> {
        &self.state
    }

    pub fn set_state(&mut self, state: SolverState<T>) {
        assert_eq!(state.q.len(), self.mass.len());
        assert_eq!(state.s.len(), 6 * self.mesh().num_elements());
        self.state = state;
    }

    pub fn projection(&self) -> &DofProjection {
        &self.projection
    }

    /// Lumped mass diagonal, `3|V|`.
    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    pub fn external_force(&self) -> &[T] {
        &self.f_ext
    }

    /// The factored constant preconditioner; shared, never rebuilt.
    pub fn preconditioner(&self) -> &Arc<ConstantPreconditioner<T>> {
        &self.precond
    }

    /// Volume-weighted `J` restricted to free DOFs.
    pub fn weighted_j(&self) -> &CsrMatrix<T> {
        &self.j_free
    }

    /// Flips the sign of the `W H⁻¹ g` term in the constraint rows. Exists
    /// only so the validation suite can show the dense oracle catching it.
    #[doc(hidden)]
    pub fn set_rhs_sign_mutation(&mut self, on: bool) {
        self.rhs_sign_mutation = on;
    }

    /// Linear momentum `Σ m (qᵗ − qᵗ⁻¹)/h`.
    pub fn momentum(&self) -> Vector3<T> {
        let mut p = Vector3::zeros();
        for (i, ((&q, &qp), &m)) in self.state.q.iter().zip(&self.state.q_prev).zip(&self.mass).enumerate() {
            p[i % 3] += m * (q - qp) / self.config.h;
        }
        p
    }

    /// Writes prescribed pin positions at time `t` into `q`.
    pub fn apply_pins(&self, q: &mut [T], t: T) {
        for pin in &self.scene.pins {
            for (&v, x) in pin.vertices.iter().zip(pin.positions_at(&self.scene.initial_positions, t)) {
                q[3 * v..3 * v + 3].copy_from_slice(x.as_slice());
            }
        }
    }

    fn inertia(&self, q: &[T]) -> Vec<T> {
        let st = &self.state;
        q.iter()
            .zip(&st.q)
            .zip(&st.q_prev)
            .map(|((&q, &qt), &qp)| q - qt - qt + qp)
            .collect()
    }

    /// Per-element constraint residual `R S − F − R N`, stacked `9|T|`.
    pub fn constraint_residual(&self, q: &[T], s: &[T], rotations: &[Matrix3<T>]) -> Vec<T> {
        let mesh = self.mesh();
        let mut c = vec![T::zero(); 9 * mesh.num_elements()];
        c.par_chunks_mut(9).enumerate().for_each(|(e, ce)| {
            let se = symmat(&Vector6::from_column_slice(&s[6 * e..6 * e + 6]));
            let m = rotations[e] * (se - mesh.frame_projector(e)) - mesh.deformation_gradient(e, q);
            ce.copy_from_slice(mat_to_vec9(&m).as_slice());
        });
        c
    }

    fn element_energy_sum(&self, s: &[T]) -> Result<T, StepError> {
        let mesh = self.mesh();
        let params = &self.scene.material;
        let psi: Result<Vec<T>, StepError> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                materials::energy(&Vector6::from_column_slice(&s[6 * e..6 * e + 6]), params)
                    .map(|p| p * mesh.volume(e))
                    .map_err(|source| StepError::Material { element: e, source })
            })
            .collect();
        Ok(psi?.into_iter().fold(T::zero(), |a, b| a + b))
    }

    /// Backward-Euler objective `1/(2h²) aᵀMa − f·q + Σ dv ψ(s) + E_contact`
    /// (the mixed form, with `s` independent of `q`).
    pub fn incremental_potential(&self, q: &[T], s: &[T]) -> Result<T, StepError> {
        let h = self.config.h;
        let a = self.inertia(q);
        let half = T::lit(0.5);
        let mut e = T::zero();
        for i in 0..q.len() {
            e += half * self.mass[i] * a[i] * a[i] / (h * h) - self.f_ext[i] * q[i];
        }
        if let Some(g) = &self.scene.ground {
            e += contact_energy(q, &self.state.q, g, h);
        }
        Ok(e + self.element_energy_sum(s)?)
    }

    /// Augmented-Lagrangian merit used by the line search:
    /// `E(q, s) − Σ dv lᵀc + Σ dv β̄/2 ‖c‖²` with `l`, `R` held fixed.
    pub fn merit(&self, q: &[T], s: &[T], l: &[T], rotations: &[Matrix3<T>], beta_bar: T) -> Result<T, StepError> {
        let mut m = self.incremental_potential(q, s)?;
        let c = self.constraint_residual(q, s, rotations);
        let half = T::lit(0.5);
        for (e, (ce, le)) in c.chunks(9).zip(l.chunks(9)).enumerate() {
            let v = self.mesh().volume(e);
            let mut lc = T::zero();
            let mut cc = T::zero();
            for k in 0..9 {
                lc += le[k] * ce[k];
                cc += ce[k] * ce[k];
            }
            m += v * (half * beta_bar * cc - lc);
        }
        Ok(m)
    }

    /// Energies, derivatives and position rows of the quadratic model at
    /// `(q, s)`, relative to the current state's `qᵗ`, `qᵗ⁻¹`.
    pub fn quadratic_model(&self, q: &[T], s: &[T]) -> Result<QuadraticModel<T>, StepError> {
        let mesh = self.mesh();
        let params = &self.scene.material;
        let blocks: Result<Vec<_>, StepError> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let se = Vector6::from_column_slice(&s[6 * e..6 * e + 6]);
                let ee = materials::evaluate(&se, params).map_err(|source| StepError::Material { element: e, source })?;
                let inv = invert_spd(&ee.hess).ok_or(StepError::Material {
                    element: e,
                    source: MaterialError::InvalidParams("energy Hessian is not invertible".into()),
                })?;
                Ok((ee, inv))
            })
            .collect();
        let blocks = blocks?;

        let h = self.config.h;
        let inv_h2 = T::one() / (h * h);
        let a = self.inertia(q);
        let mut grad_full: Vec<T> = (0..q.len()).map(|i| self.mass[i] * a[i] * inv_h2 - self.f_ext[i]).collect();
        let mut diag_full: Vec<T> = self.mass.iter().map(|&m| m * inv_h2).collect();
        if let Some(g) = &self.scene.ground {
            let ct = contact_terms(q, &self.state.q, g, h);
            for i in 0..q.len() {
                grad_full[i] += ct.gradient[i];
                diag_full[i] += ct.stiffness[i];
            }
        }
        Ok(QuadraticModel {
            psi: blocks.iter().map(|(b, _)| b.psi).collect(),
            grad: blocks.iter().map(|(b, _)| b.grad).collect(),
            hess: blocks.iter().map(|(b, _)| b.hess).collect(),
            hess_inv: blocks.iter().map(|(_, inv)| *inv).collect(),
            mass_block: self.projection.project(&diag_full),
            rhs_q: self.projection.project(&grad_full).into_iter().map(|g| -g).collect(),
        })
    }

    /// The saddle system and right-hand side of the model at `(q, s)` for
    /// fixed rotations.
    pub fn assemble_global(
        &self,
        model: &QuadraticModel<T>,
        q: &[T],
        s: &[T],
        rotations: &[Matrix3<T>],
    ) -> (SaddleSystem<T>, Vec<T>) {
        let mesh = self.mesh();
        let mu = self.scene.material.mu();
        let tik = self.config.tikhonov / mu;
        let rot = self.config.rotation_compliance / mu;
        let flip = if self.rhs_sign_mutation { -T::one() } else { T::one() };
        let per_element: Vec<(Matrix9<T>, Vector9<T>)> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let v = mesh.volume(e);
                let w: Matrix9x6<T> = w_block(&rotations[e]);
                let wh = w * model.hess_inv[e];
                let c = (wh * w.transpose() + skew_projector(&rotations[e]) * rot + Matrix9::identity() * tik) * v;
                let se = Vector6::from_column_slice(&s[6 * e..6 * e + 6]);
                let f = mat_to_vec9(&mesh.deformation_gradient(e, q));
                let rn = mat_to_vec9(&(rotations[e] * mesh.frame_projector(e)));
                let rhs = (w * se - f - rn - wh * model.grad[e] * flip) * v;
                (c, rhs)
            })
            .collect();
        let nq = self.projection.num_free();
        let mut rhs = Vec::with_capacity(nq + 9 * per_element.len());
        rhs.extend_from_slice(&model.rhs_q);
        let mut compliance = Vec::with_capacity(per_element.len());
        for (c, r) in per_element {
            compliance.push(c);
            rhs.extend_from_slice(r.as_slice());
        }
        let system = SaddleSystem::new(
            model.mass_block.clone(),
            self.j_free.clone(),
            self.jt_free.clone(),
            compliance,
            self.residual_weights.clone(),
        );
        (system, rhs)
    }

    /// The global step: solves the model's saddle system at fixed rotations
    /// and recovers `Δs`. `guess` warm-starts CG with a previous `(Δq, l)`.
    pub fn global_step(
        &self,
        model: &QuadraticModel<T>,
        q: &[T],
        s: &[T],
        rotations: &[Matrix3<T>],
        guess: Option<(&[T], &[T])>,
    ) -> Result<GlobalSolution<T>, StepError> {
        let (system, rhs) = self.assemble_global(model, q, s, rotations);
        let x0 = guess.map(|(dq, l)| [dq, l].concat());
        let maxiter = self
            .config
            .cg_max_iterations
            .unwrap_or_else(|| default_max_iterations(system.dim()));
        let PcgResult {
            dq,
            l,
            iterations,
            residual,
            converged,
        } = solve_saddle(&system, &rhs, &self.precond, x0.as_deref(), self.config.cg_tol, maxiter, self.config.cg_method)?;
        let ds = recover_stretch(model, rotations, &l);
        Ok(GlobalSolution {
            dq,
            ds,
            l,
            iterations,
            residual,
            converged,
        })
    }

    /// Advances one timestep. On error the state is left unchanged.
    pub fn step(&mut self) -> Result<StepStats, StepError> {
        let cfg = self.config;
        let h = cfg.h;
        let mesh = self.scene.mesh.clone();
        let ne = mesh.num_elements();
        let mu = self.scene.material.mu();
        let step_index = self.state.step;
        let t_new = self.state.time + h;

        let mut q = warm_start(&self.state, &self.f_ext, &self.mass, h);
        self.apply_pins(&mut q, t_new);
        let mut s = self.state.s.clone();
        let mut l = vec![T::zero(); 9 * ne];
        let mut rotations = self.state.rotations.clone();
        let mut beta = self.state.beta.clone();
        let mut alpha = cfg.alpha0;
        let bbox = mesh.bbox_diagonal();

        let mut stats = StepStats {
            step: step_index,
            cg_converged: true,
            ..Default::default()
        };
        let mut substep = 0;
        for _outer in 0..cfg.outer_iterations {
            let t_model = Instant::now();
            let model = self.quadratic_model(&q, &s)?;
            let mut model_ms = ms(t_model);

            let mut dq = vec![T::zero(); self.projection.num_free()];
            let mut ds = vec![T::zero(); 6 * ne];
            let mut q_w = q.clone();
            let mut s_w = s.clone();
            let first_row = stats.substeps.len();
            for inner in 0..cfg.inner_iterations {
                let t_rot = Instant::now();
                let change = local_step(&mesh, &q_w, &s_w, &l, &mut rotations, &mut beta, alpha, mu);
                alpha *= cfg.alpha_growth;
                let rotation_ms = ms(t_rot);
                if !cfg.fixed_iterations && inner > 0 && change <= cfg.rotation_tol {
                    break;
                }

                let t_asm = Instant::now();
                let (system, rhs) = self.assemble_global(&model, &q, &s, &rotations);
                let assembly_ms = ms(t_asm) + std::mem::take(&mut model_ms);

                let t_kkt = Instant::now();
                let maxiter = cfg.cg_max_iterations.unwrap_or_else(|| default_max_iterations(system.dim()));
                let x0 = [dq.as_slice(), l.as_slice()].concat();
                let res = solve_saddle(&system, &rhs, &self.precond, Some(&x0), cfg.cg_tol, maxiter, cfg.cg_method)?;
                dq = res.dq;
                l = res.l;
                ds = recover_stretch(&model, &rotations, &l);
                let kkt_solve_ms = ms(t_kkt);

                q_w.clone_from(&q);
                self.projection.add_free(&mut q_w, &dq, T::one());
                for (sw, (&s0, &d)) in s_w.iter_mut().zip(s.iter().zip(&ds)) {
                    *sw = s0 + d;
                }
                let c = self.constraint_residual(&q_w, &s_w, &rotations);
                stats.cg_converged &= res.converged;
                stats.substeps.push(SubstepStats {
                    step: step_index,
                    substep,
                    assembly_ms,
                    kkt_solve_ms,
                    rotation_ms,
                    cg_iters: res.iterations,
                    cg_residual: res.residual.as_f64(),
                    cg_converged: res.converged,
                    constraint_residual: inf_norm(&c).as_f64(),
                    energy: f64::NAN,
                });
                substep += 1;
            }

            let beta_bar = beta.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(ne);
            let merit0 = self.merit(&q, &s, &l, &rotations, beta_bar)?;
            let ls = line_search(
                merit0,
                |t| {
                    let mut qt = q.clone();
                    self.projection.add_free(&mut qt, &dq, t);
                    let st: Vec<T> = s.iter().zip(&ds).map(|(&a, &d)| a + t * d).collect();
                    self.merit(&qt, &st, &l, &rotations, beta_bar).ok()
                },
                cfg.line_search_shrink,
                cfg.max_backtracks,
            );
            self.projection.add_free(&mut q, &dq, ls.t);
            for (a, &d) in s.iter_mut().zip(&ds) {
                *a += ls.t * d;
            }
            stats.outer_iterations += 1;
            stats.step_lengths.push(ls.t.as_f64());
            stats.stagnated |= ls.stagnated;

            let energy = self.incremental_potential(&q, &s)?.as_f64();
            for row in &mut stats.substeps[first_row..] {
                row.energy = energy;
            }
            if !cfg.fixed_iterations {
                let step_inf = dq.iter().fold(T::zero(), |a, &d| a.max((d * ls.t).abs()));
                let c = inf_norm(&self.constraint_residual(&q, &s, &rotations));
                if step_inf <= cfg.position_tol * bbox && c <= cfg.constraint_tol {
                    stats.converged = true;
                    break;
                }
            }
        }

        if !(q.iter().chain(&s).chain(&l).all(|v| v.is_finite())) {
            return Err(StepError::NonFinite);
        }
        let state = &mut self.state;
        state.q_prev = std::mem::replace(&mut state.q, q);
        state.s = s;
        state.l = l;
        state.rotations = rotations;
        state.beta = beta;
        state.time = t_new;
        state.step += 1;
        Ok(stats)
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a.max(x.abs()))
}

/// `Δs_e = H_e⁻¹(W_eᵀ l_e − g_e)` for every element.
pub fn recover_stretch<T: Real>(model: &QuadraticModel<T>, rotations: &[Matrix3<T>], l: &[T]) -> Vec<T> {
    let mut ds = vec![T::zero(); 6 * rotations.len()];
    ds.par_chunks_mut(6).enumerate().for_each(|(e, out)| {
        let w = w_block(&rotations[e]);
        let le = Vector9::from_column_slice(&l[9 * e..9 * e + 9]);
        let d = model.hess_inv[e] * (w.transpose() * le - model.grad[e]);
        out.copy_from_slice(d.as_slice());
    });
    ds
}

/// Orthogonal projector onto `{vec(R K) : K skew}`, the complement of the
/// range of `W_e`.
pub fn skew_projector<T: Real>(r: &Matrix3<T>) -> Matrix9<T> {
    let half = T::lit(0.5);
    let mut p = Matrix9::zeros();
    for (i, j) in [(1, 2), (0, 2), (0, 1)] {
        let mut k = Matrix3::zeros();
        k[(i, j)] = T::one();
        k[(j, i)] = -T::one();
        let b = mat_to_vec9(&(r * k));
        p += b * b.transpose() * half;
    }
    p
}

fn invert_spd<T: Real>(h: &Matrix6<T>) -> Option<Matrix6<T>> {
    match h.cholesky() {
        Some(c) => Some(c.inverse()),
        None => h.try_inverse(),
    }
}

/// Initial state: scene's initial positions and velocity, pins at `t = 0`,
/// rotations fitted to the initial deformation.
fn initial_state<T: Real>(scene: &Scene<T>, h: T) -> SolverState<T> {
    let mesh = &scene.mesh;
    let mut state = SolverState::at_rest(mesh);
    for (v, p) in scene.initial_positions.iter().enumerate() {
        let prev = p - scene.initial_velocity * h;
        state.q[3 * v..3 * v + 3].copy_from_slice(p.as_slice());
        state.q_prev[3 * v..3 * v + 3].copy_from_slice(prev.as_slice());
    }
    for pin in &scene.pins {
        let now = pin.positions_at(&scene.initial_positions, T::zero());
        let before = pin.positions_at(&scene.initial_positions, -h);
        for ((&v, a), b) in pin.vertices.iter().zip(now).zip(before) {
            state.q[3 * v..3 * v + 3].copy_from_slice(a.as_slice());
            state.q_prev[3 * v..3 * v + 3].copy_from_slice(b.as_slice());
        }
    }
    let moved = scene
        .initial_positions
        .iter()
        .zip(mesh.rest_positions())
        .any(|(a, b)| a != b);
    if moved {
        for e in 0..mesh.num_elements() {
            let f = mesh.deformation_gradient(e, &state.q);
            let n = mesh.frame_projector(e);
            let r = polar_rotation(&(f * (Matrix3::identity() - n)));
            state.rotations[e] = r;
            if mesh.kind() == ElementKind::Tet {
                let sm = r.transpose() * f;
                let sym = (sm + sm.transpose()) * T::lit(0.5);
                state.s[6 * e..6 * e + 6].copy_from_slice(sym_to_vec(&sym).as_slice());
            }
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_search_cases() {
        // Quadratic merit along a descent direction: full step accepted.
        let f = |t: f64| (1.0 - t) * (1.0 - t);
        let ls = line_search(f(0.0), |t| Some(f(t)), 0.5, 20);
        assert_eq!(ls.t, 1.0);
        // Undefined beyond t = 0.3: first admissible power of 1/2 is 1/4.
        let ls = line_search(f(0.0), |t| (t < 0.3).then(|| f(t)), 0.5, 20);
        assert_eq!(ls.t, 0.25);
        // Ascent: stagnation.
        let ls = line_search(0.0, |t: f64| Some(t), 0.5, 20);
        assert!(ls.stagnated && ls.t == 0.0);
    }

    #[test]
    fn warm_start_formula() {
        let mut st = SolverState {
            q: vec![1.0f64, 2.0, 3.0],
            q_prev: vec![0.5, 2.0, 3.0],
            s: vec![],
            l: vec![],
            rotations: vec![],
            beta: vec![],
            time: 0.0,
            step: 0,
        };
        let q = warm_start(&st, &[0.0, -9.81, 0.0], &[1.0; 3], 0.1);
        assert!((q[0] - 1.5).abs() < 1e-15);
        assert!((q[1] - (2.0 - 0.0981)).abs() < 1e-14);
        st.q_prev = st.q.clone();
        assert_eq!(warm_start(&st, &[0.0; 3], &[1.0; 3], 0.1), st.q);
    }
}
