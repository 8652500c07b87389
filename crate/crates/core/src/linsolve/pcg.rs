use super::{ConstantPreconditioner, SaddleSystem};
use crate::error::SolveError;
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct PcgResult<T> {
    pub dq: Vec<T>,
    pub l: Vec<T>,
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖` in the system's weighted norm.
    pub residual: T,
    pub converged: bool,
}

/// `10·sqrt(n)` capped at 2000.
pub fn default_max_iterations(dim: usize) -> usize {
    ((10.0 * (dim as f64).sqrt()).ceil() as usize).clamp(1, 2000)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Conjugate gradients on the indefinite saddle system with the indefinite
/// constant preconditioner.
///
/// The recurrences are the standard PCG ones. If the curvature `pᵀAp`
/// changes sign relative to the first iteration, the iteration restarts once
/// from the current iterate's true residual; a second breakdown ends the
/// solve with `converged = false`. The best iterate seen is returned.
pub fn pcg_saddle<T: Real>(
    system: &SaddleSystem<T>,
    rhs: &[T],
    precond: &ConstantPreconditioner<T>,
    x0: Option<&[T]>,
    tol: T,
    max_iterations: usize,
) -> Result<PcgResult<T>, SolveError> {
    let n = system.dim();
    if rhs.len() != n {
        return Err(SolveError::Dimension {
            expected: n,
            actual: rhs.len(),
        });
    }
    if precond.dim() != n {
        return Err(SolveError::Dimension {
            expected: n,
            actual: precond.dim(),
        });
    }
    let nq = system.num_q();
    let finish = |x: Vec<T>, iterations, residual, converged| {
        let (dq, l) = x.split_at(nq);
        PcgResult {
            dq: dq.to_vec(),
            l: l.to_vec(),
            iterations,
            residual,
            converged,
        }
    };

    let b_norm = system.residual_norm(rhs);
    if b_norm == T::zero() {
        return Ok(finish(vec![T::zero(); n], 0, T::zero(), true));
    }

    let mut x = match x0 {
        Some(x0) if x0.len() == n && x0.iter().all(|v| v.is_finite()) => x0.to_vec(),
        _ => vec![T::zero(); n],
    };
    let mut ax = system.apply(&x);
    let mut r: Vec<T> = rhs.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
    let mut rel = system.residual_norm(&r) / b_norm;
    let mut best = (rel, x.clone());
    if rel <= tol {
        return Ok(finish(x, 0, rel, true));
    }

    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut curvature_sign: Option<bool> = None;
    let mut restarted = false;
    let mut iterations = 0;

    while iterations < max_iterations {
        system.apply_into(&p, &mut ax);
        let pap = dot(&p, &ax);
        let positive = pap > T::zero();
        let breakdown = pap == T::zero() || !pap.is_finite() || curvature_sign.is_some_and(|s| s != positive);
        if breakdown {
            if restarted {
                break;
            }
            restarted = true;
            curvature_sign = None;
            let ax_full = system.apply(&x);
            r = rhs.iter().zip(&ax_full).map(|(&b, &a)| b - a).collect();
            z = precond.apply(&r);
            p.clone_from(&z);
            rho = dot(&r, &z);
            continue;
        }
        curvature_sign.get_or_insert(positive);
        iterations += 1;

        let alpha = rho / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        if !alpha.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite { iteration: iterations });
        }
        rel = system.residual_norm(&r) / b_norm;
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= tol {
            return Ok(finish(x, iterations, rel, true));
        }
        precond.apply_into(&r, &mut z);
        let rho_next = dot(&r, &z);
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(finish(best.1, iterations, best.0, false))
}
