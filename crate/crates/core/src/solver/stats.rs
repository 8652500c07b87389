use std::fmt::Write;

/// Timings and residuals of one inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepStats {
    pub step: usize,
    pub substep: usize,
    pub assembly_ms: f64,
    pub kkt_solve_ms: f64,
    pub rotation_ms: f64,
    pub cg_iters: usize,
    pub cg_residual: f64,
    pub cg_converged: bool,
    /// `‖R S − F − R N‖∞` after the global step.
    pub constraint_residual: f64,
    /// Incremental potential after the enclosing outer iteration's line search.
    pub energy: f64,
}

impl SubstepStats {
    pub const CSV_HEADER: &'static str =
        "step,substep,assembly_ms,kkt_solve_ms,rotation_ms,cg_iters,cg_residual,constraint_residual,energy";

    /// One CSV row; timing columns are written as 0 when `timings` is false
    /// so that repeated runs can be compared byte for byte.
    pub fn csv_row(&self, timings: bool) -> String {
        let t = |ms: f64| if timings { ms } else { 0.0 };
        let mut s = String::new();
        write!(
            s,
            "{},{},{:.6},{:.6},{:.6},{},{:e},{:e},{:e}",
            self.step,
            self.substep,
            t(self.assembly_ms),
            t(self.kkt_solve_ms),
            t(self.rotation_ms),
            self.cg_iters,
            self.cg_residual,
            self.constraint_residual,
            self.energy
        )
        .unwrap();
        s
    }

    pub fn is_finite(&self) -> bool {
        [
            self.assembly_ms,
            self.kkt_solve_ms,
            self.rotation_ms,
            self.cg_residual,
            self.constraint_residual,
            self.energy,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub substeps: Vec<SubstepStats>,
    pub outer_iterations: usize,
    /// Accepted line-search step per outer iteration.
    pub step_lengths: Vec<f64>,
    /// Some line search found no decrease and took a zero step.
    pub stagnated: bool,
    /// The convergence tolerances were met (always false in fixed-iteration mode
    /// unless checked explicitly).
    pub converged: bool,
    /// Every global solve reached the CG tolerance.
    pub cg_converged: bool,
}
