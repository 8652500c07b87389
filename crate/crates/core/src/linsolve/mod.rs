//! The global saddle-point system, its constant preconditioner, and the
//! conjugate gradient driver that solves one with the other.

mod pcg;
mod precond;
mod saddle;
mod schur;

pub use pcg::{default_max_iterations, pcg_saddle, PcgResult};
pub use precond::{factor_preconditioner, ConstantPreconditioner};
pub use saddle::SaddleSystem;
pub use schur::pcg_schur;

/// Symmetric 9×9 compliance block of one element.
pub type Matrix9<T> = nalgebra::SMatrix<T, 9, 9>;

/// Which conjugate-gradient variant solves the saddle system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CgMethod {
    /// CG on the full indefinite system with the indefinite constant
    /// preconditioner, falling back to `Schur` if it breaks down or stalls.
    Saddle,
    /// CG on the multiplier-eliminated SPD system.
    #[default]
    Schur,
}

/// Solves with the chosen method.
pub fn solve_saddle<T: crate::real::Real>(
    system: &SaddleSystem<T>,
    rhs: &[T],
    precond: &ConstantPreconditioner<T>,
    x0: Option<&[T]>,
    tol: T,
    max_iterations: usize,
    method: CgMethod,
) -> Result<PcgResult<T>, crate::error::SolveError> {
    match method {
        CgMethod::Schur => pcg_schur(system, rhs, precond, x0, tol, max_iterations),
        CgMethod::Saddle => {
            let first = pcg_saddle(system, rhs, precond, x0, tol, max_iterations)?;
            if first.converged {
                return Ok(first);
            }
            let mut second = pcg_schur(system, rhs, precond, x0, tol, max_iterations)?;
            second.iterations += first.iterations;
            Ok(second)
        }
    }
}
