use super::{ConstantPreconditioner, Matrix9, PcgResult, SaddleSystem};
use crate::error::SolveError;
use crate::real::Real;
use nalgebra::SVector;
use rayon::prelude::*;

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn invert_blocks<T: Real>(blocks: &[Matrix9<T>]) -> Result<Vec<Matrix9<T>>, SolveError> {
    blocks
        .par_iter()
        .enumerate()
        .map(|(e, c)| {
            c.cholesky().map(|ch| ch.inverse()).ok_or_else(|| {
                SolveError::Factorization(format!("compliance block of element {e} is not positive definite"))
            })
        })
        .collect()
}

fn apply_blocks<T: Real>(blocks: &[Matrix9<T>], x: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    y.par_chunks_mut(9)
        .zip(x.par_chunks(9))
        .zip(blocks.par_iter())
        .for_each(|((y, x), b)| {
            let r = b * SVector::<T, 9>::from_column_slice(x);
            y.copy_from_slice(r.as_slice());
        });
    y
}

/// Solves the saddle system by eliminating the block-diagonal multiplier
/// rows: CG on the SPD Schur complement `A_q + J̃ᵀ C⁻¹ J̃`, preconditioned by
/// the constant Schur complement held in `precond`, then
/// `l = C⁻¹ (J̃ Δq − b_l)`.
///
/// The multiplier rows are then satisfied to rounding, so the reported
/// residual (full system, weighted norm) is that of the position rows.
pub fn pcg_schur<T: Real>(
    system: &SaddleSystem<T>,
    rhs: &[T],
    precond: &ConstantPreconditioner<T>,
    x0: Option<&[T]>,
    tol: T,
    max_iterations: usize,
) -> Result<PcgResult<T>, SolveError> {
    let n = system.dim();
    if rhs.len() != n || precond.dim() != n {
        return Err(SolveError::Dimension {
            expected: n,
            actual: if rhs.len() != n { rhs.len() } else { precond.dim() },
        });
    }
    let nq = system.num_q();
    let b_norm = system.residual_norm(rhs);
    if b_norm == T::zero() {
        return Ok(PcgResult {
            dq: vec![T::zero(); nq],
            l: vec![T::zero(); n - nq],
            iterations: 0,
            residual: T::zero(),
            converged: true,
        });
    }
    let (bq, bl) = rhs.split_at(nq);
    let c_inv = invert_blocks(&system.compliance)?;
    let schur = |u: &[T]| -> Vec<T> {
        let ju = system.j.mul_vec(u);
        let mut y = system.jt.mul_vec(&apply_blocks(&c_inv, &ju));
        for ((y, &m), &u) in y.iter_mut().zip(&system.mass).zip(u) {
            *y += m * u;
        }
        y
    };
    let mut b = system.jt.mul_vec(&apply_blocks(&c_inv, bl));
    for (b, &q) in b.iter_mut().zip(bq) {
        *b += q;
    }

    let mut u = match x0 {
        Some(x0) if x0.len() == n && x0[..nq].iter().all(|v| v.is_finite()) => x0[..nq].to_vec(),
        _ => vec![T::zero(); nq],
    };
    let su = schur(&u);
    let mut r: Vec<T> = b.iter().zip(&su).map(|(&b, &a)| b - a).collect();
    let stop = tol * b_norm;
    let norm = |r: &[T]| dot(r, r).sqrt();
    let mut iterations = 0;
    let mut res = norm(&r);
    if res > stop {
        let mut z = precond.solve_schur(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iterations {
            let ap = schur(&p);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..nq {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if !alpha.is_finite() {
                return Err(SolveError::NonFinite { iteration: iterations });
            }
            res = norm(&r);
            if res <= stop {
                break;
            }
            z = precond.solve_schur(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..nq {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite { iteration: iterations });
    }
    let mut ju = system.j.mul_vec(&u);
    for (a, &b) in ju.iter_mut().zip(bl) {
        *a -= b;
    }
    let l = apply_blocks(&c_inv, &ju);
    // True residual of the full system.
    let x = [u.as_slice(), l.as_slice()].concat();
    let ax = system.apply(&x);
    let r_full: Vec<T> = rhs.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
    let residual = system.residual_norm(&r_full) / b_norm;
    Ok(PcgResult {
        dq: u,
        l,
        iterations,
        residual,
        converged: residual <= tol * T::lit(1.0 + 1e-6) || res <= stop,
    })
}
