//! Oracle and invariant suites behind `mixedfem validate` and the
//! acceptance tests.
//!
//! Every check is a plain function from a [`Context`] (seed, mutation
//! switches) to a one-line report. Checks are grouped by the module they
//! exercise so a run can be filtered with e.g. `rotation` or
//! `solver.dense_oracle`.

pub mod criteria;
pub mod oracles;
pub mod scenarios;
mod suites;

use std::time::Instant;

/// `Ok(summary)` on success, `Err(reason)` on failure.
pub type CheckResult = Result<String, String>;

#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub seed: u64,
    /// Flip the sign of the `W H⁻¹ g` term in the production constraint
    /// rows; the dense oracle must then fail.
    pub mutate_rhs_sign: bool,
}

impl Default for Context {
    fn default() -> Self {
        Self {
            seed: 0x5EED,
            mutate_rhs_sign: false,
        }
    }
}

#[derive(Clone, Copy)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    /// Runs a full simulation scenario (seconds to minutes).
    pub slow: bool,
    pub run: fn(&Context) -> CheckResult,
}

impl Check {
    pub fn id(&self) -> String {
        format!("{}.{}", self.module, self.name)
    }
}

impl std::fmt::Debug for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Check({})", self.id())
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

macro_rules! check {
    ($module:literal, $name:literal, $f:path) => {
        Check {
            module: $module,
            name: $name,
            slow: false,
            run: $f,
        }
    };
    ($module:literal, $name:literal, $f:path, slow) => {
        Check {
            module: $module,
            name: $name,
            slow: true,
            run: $f,
        }
    };
}

/// Every registered check, in a stable order.
pub fn all_checks() -> Vec<Check> {
    use criteria as c;
    use suites as s;
    vec![
        check!("mesh", "tet_volume", s::mesh_tet_volume),
        check!("mesh", "degenerate_rejected", s::mesh_degenerate_rejected),
        check!("mesh", "gradient_rotation", s::mesh_gradient_rotation),
        check!("mesh", "translation_invariance", s::mesh_translation_invariance),
        check!("mesh", "shell_singular_values", s::mesh_shell_singular_values),
        check!("mesh", "rod_stretch", s::mesh_rod_stretch),
        check!("mesh", "rod_frame_equivariance", s::mesh_rod_frame_equivariance),
        check!("mesh", "rigid_invariance", s::mesh_rigid_invariance),
        check!("kinematics", "operator_oracle", c::operator_oracle),
        check!("kinematics", "codec_round_trip", s::kinematics_codec_round_trip),
        check!("kinematics", "rigid_rotation", s::kinematics_rigid_rotation),
        check!("kinematics", "w_tensor", s::kinematics_w_tensor),
        check!("materials", "fd_derivatives", c::material_derivatives),
        check!("materials", "rest_stability", s::materials_rest_stability),
        check!("materials", "isotropy", s::materials_isotropy),
        check!("materials", "arap_hessian_constant", s::materials_arap_hessian),
        check!("materials", "spd_projection", s::materials_spd_projection),
        check!("rotation", "procrustes_maximality", c::procrustes),
        check!("rotation", "known_factor", s::rotation_known_factor),
        check!("rotation", "equivariance", s::rotation_equivariance),
        check!("linsolve", "preconditioner_dense", s::linsolve_preconditioner_dense),
        check!("linsolve", "pcg_dense", s::linsolve_pcg_dense),
        check!("linsolve", "symmetry", s::linsolve_symmetry),
        check!("linsolve", "residual_contract", s::linsolve_residual_contract),
        check!("solver", "dense_oracle", c::dense_oracle),
        check!("solver", "consistent_rhs_zero", s::solver_consistent_rhs_zero),
        check!("solver", "local_step_maximality", s::solver_local_step_maximality),
        check!("solver", "merit_gradient", s::solver_merit_gradient),
        check!("solver", "pins_exact", s::solver_pins_exact),
        check!("solver", "equilibrium_momentum", c::equilibrium_and_momentum, slow),
        check!("solver", "polar_consistency", c::polar_consistency, slow),
        check!("solver", "beam_oracle", c::beam_oracle, slow),
        check!("solver", "stiffness_robustness", c::stiffness_robustness, slow),
        check!("solver", "necking", c::necking, slow),
        check!("solver", "three_representations", c::three_representations, slow),
        check!("scene", "projection", s::scene_projection),
        check!("scene", "contact_law", s::scene_contact_law),
        check!("scene", "mass_lumping", s::scene_mass_lumping),
        check!("scene", "settled_penetration", s::scene_settled_penetration, slow),
    ]
}

/// Checks selected by `filter` (all when `None`): every check of the module
/// when `filter` names one, otherwise those whose id contains it.
pub fn select(filter: Option<&str>) -> Vec<Check> {
    let all = all_checks();
    let Some(f) = filter else { return all };
    if all.iter().any(|c| c.module == f) {
        all.into_iter().filter(|c| c.module == f).collect()
    } else {
        all.into_iter().filter(|c| c.id().contains(f)).collect()
    }
}

/// Runs one check, converting panics into failures.
pub fn run_check(check: &Check, ctx: &Context) -> Outcome {
    let start = Instant::now();
    let result = std::panic::catch_unwind(|| (check.run)(ctx)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        id: check.id(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Fails with `msg` unless `cond` holds.
pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
