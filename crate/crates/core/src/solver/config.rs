use crate::error::SceneError;
use crate::linsolve::CgMethod;
use crate::real::Real;

/// Timestep and iteration settings for [`super::Simulation::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig<T> {
    /// Timestep, s.
    pub h: T,
    /// Outer (line-searched) iterations per step, `n`.
    pub outer_iterations: usize,
    /// Inner local/global iterations per outer iteration, `m` ("Substeps").
    pub inner_iterations: usize,
    /// Run exactly `n × m` iterations (interactive mode) instead of stopping
    /// at the convergence tolerances below.
    pub fixed_iterations: bool,
    /// Initial penalty factor `α`; the per-element penalty is
    /// `β = max(α‖l_e‖, μ)`.
    pub alpha0: T,
    /// Factor applied to `α` after every inner iteration; reset each step.
    pub alpha_growth: T,
    pub line_search_shrink: T,
    pub max_backtracks: usize,
    /// Outer stop: `‖Δq‖∞ ≤ position_tol · bbox diagonal` ...
    pub position_tol: T,
    /// ... and `‖R S − F‖∞ ≤ constraint_tol`.
    pub constraint_tol: T,
    /// Inner stop: every element's rotation moved by at most this (Frobenius).
    pub rotation_tol: T,
    pub cg_tol: T,
    pub cg_method: CgMethod,
    /// Defaults to `10·sqrt(dim)` capped at 2000.
    pub cg_max_iterations: Option<usize>,
    /// Tikhonov shift of the compliance block, relative to `dv/μ`.
    pub tikhonov: T,
    /// Compliance on the rotational (skew) subspace of each multiplier block,
    /// relative to `dv/μ`. The skew part of the multipliers vanishes at a
    /// solution, so this only shapes convergence. With `0` the subspace is
    /// left to the Tikhonov shift alone and the global step must keep every
    /// `Rᵀ F` exactly symmetric for the current rotations; on heavily pinned
    /// meshes that locks the positions to the local step and the outer loop
    /// stalls.
    pub rotation_compliance: T,
}

impl<T: Real> Default for StepConfig<T> {
    fn default() -> Self {
        Self {
            h: T::lit(0.01),
            outer_iterations: 1,
            inner_iterations: 5,
            fixed_iterations: true,
            alpha0: T::lit(10.0),
            alpha_growth: T::lit(1.5),
            line_search_shrink: T::lit(0.5),
            max_backtracks: 20,
            position_tol: T::lit(1e-6),
            constraint_tol: T::lit(1e-6),
            rotation_tol: T::lit(1e-8),
            cg_tol: T::lit(1e-7),
            cg_method: CgMethod::default(),
            cg_max_iterations: None,
            tikhonov: T::lit(1e-6),
            rotation_compliance: T::one(),
        }
    }
}

impl<T: Real> StepConfig<T> {
    /// Iterate to the convergence tolerances with generous budgets, for
    /// quasi-static and reference runs. Rotations carry over between outer
    /// iterations, so short inner loops with many re-linearizations converge
    /// in fewer global solves than long inner loops.
    pub fn converged(h: T) -> Self {
        Self {
            h,
            outer_iterations: 200,
            inner_iterations: 10,
            fixed_iterations: false,
            cg_tol: T::lit(1e-10),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |field: &str, message: &str| {
            Err(SceneError::Field {
                field: format!("solver.{field}"),
                message: message.into(),
            })
        };
        if !(self.h > T::zero()) || !self.h.is_finite() {
            return bad("h", "timestep must be positive");
        }
        if self.inner_iterations == 0 {
            return bad("Substeps", "must be at least 1");
        }
        if self.outer_iterations == 0 {
            return bad("outer", "must be at least 1");
        }
        if !(self.alpha0 > T::zero()) {
            return bad("alpha0", "must be positive");
        }
        if !(self.alpha_growth >= T::one()) {
            return bad("alpha_growth", "must be at least 1");
        }
        if !(self.line_search_shrink > T::zero() && self.line_search_shrink < T::one()) {
            return bad("line_search_shrink", "must lie in (0, 1)");
        }
        if !(self.cg_tol > T::zero()) {
            return bad("cg_tol", "must be positive");
        }
        if !(self.tikhonov >= T::zero()) {
            return bad("tikhonov", "must be non-negative");
        }
        if !(self.rotation_compliance >= T::zero()) {
            return bad("rotation_compliance", "must be non-negative");
        }
        if self.cg_max_iterations == Some(0) {
            return bad("cg_max_iterations", "must be at least 1");
        }
        Ok(())
    }
}
