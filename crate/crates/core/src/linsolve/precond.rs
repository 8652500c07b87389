use crate::error::SolveError;
use crate::real::Real;
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use rayon::prelude::*;
use sprs::{FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use std::sync::Arc;

/// Exact inverse of the constant saddle matrix
///
/// ```text
/// ⎡ M/h²   Jᵀ ⎤
/// ⎣  J    −D  ⎦ ,   D = diag(dv_e (1 + ε) / μ) ⊗ I₉
/// ```
///
/// The diagonal multiplier block is eliminated once, leaving the SPD Schur
/// complement `M/h² + Jᵀ D⁻¹ J` which is factored by a sparse LDLᵀ with
/// reverse Cuthill-McKee ordering. Built once per simulation.
pub struct ConstantPreconditioner<T: Real> {
    factor: LdlNumeric<T, usize>,
    d_inv: Vec<T>,
    j: Arc<CsrMatrix<T>>,
    jt: Arc<CsrMatrix<T>>,
    mass: Vec<T>,
}

impl<T: Real> std::fmt::Debug for ConstantPreconditioner<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstantPreconditioner")
            .field("num_q", &self.mass.len())
            .field("num_l", &self.j.nrows())
            .field("factor_nnz", &self.factor.nnz())
            .finish()
    }
}

/// `mass` is the free-DOF diagonal of `M/h²`; `j` the volume-weighted,
/// free-column constraint map; `volumes` the per-element measures.
pub fn factor_preconditioner<T: Real>(
    mass: Vec<T>,
    j: Arc<CsrMatrix<T>>,
    jt: Arc<CsrMatrix<T>>,
    mu: T,
    volumes: &[T],
    tikhonov: T,
) -> Result<ConstantPreconditioner<T>, SolveError> {
    if !(mu > T::zero()) {
        return Err(SolveError::Factorization(format!("mu must be positive, got {mu}")));
    }
    if j.nrows() != 9 * volumes.len() || j.ncols() != mass.len() {
        return Err(SolveError::Dimension {
            expected: 9 * volumes.len(),
            actual: j.nrows(),
        });
    }
    let d_inv: Vec<T> = volumes.iter().map(|&v| mu / (v * (T::one() + tikhonov))).collect();

    let n = mass.len();
    let mut tri = TriMat::new((n, n));
    for (i, &m) in mass.iter().enumerate() {
        tri.add_triplet(i, i, m);
    }
    for r in 0..j.nrows() {
        let w = d_inv[r / 9];
        let row: Vec<_> = j.row(r).collect();
        for &(c1, v1) in &row {
            for &(c2, v2) in &row {
                tri.add_triplet(c1, c2, w * v1 * v2);
            }
        }
    }
    let schur: sprs::CsMat<T> = tri.to_csc();
    let factor = Ldl::new()
        .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
        .check_symmetry(SymmetryCheck::DontCheckSymmetry)
        .numeric(schur.view())
        .map_err(|e| SolveError::Factorization(format!("{e:?} (check pins and mesh connectivity)")))?;
    if let Some(bad) = factor.d().iter().position(|d| !(*d > T::zero())) {
        return Err(SolveError::Factorization(format!(
            "non-positive pivot at position {bad}; the free position block is singular (check pins and mesh connectivity)"
        )));
    }
    Ok(ConstantPreconditioner {
        factor,
        d_inv,
        j,
        jt,
        mass,
    })
}

impl<T: Real> ConstantPreconditioner<T> {
    pub fn num_q(&self) -> usize {
        self.mass.len()
    }

    pub fn dim(&self) -> usize {
        self.mass.len() + self.j.nrows()
    }

    /// Solves with the factored constant Schur complement `M/h² + Jᵀ D⁻¹ J`.
    pub fn solve_schur(&self, b: &[T]) -> Vec<T> {
        self.factor.solve(&b.to_vec())
    }

    pub fn apply_into(&self, b: &[T], x: &mut [T]) {
        let nq = self.num_q();
        let (bq, bl) = b.split_at(nq);
        let scaled: Vec<T> = bl.par_iter().enumerate().map(|(r, &v)| v * self.d_inv[r / 9]).collect();
        let mut rhs = self.jt.mul_vec(&scaled);
        for (r, &v) in rhs.iter_mut().zip(bq) {
            *r += v;
        }
        let xq: Vec<T> = self.factor.solve(&rhs);
        let (out_q, out_l) = x.split_at_mut(nq);
        out_q.copy_from_slice(&xq);
        self.j.mul_vec_into(&xq, out_l);
        out_l.par_iter_mut().zip(bl.par_iter()).enumerate().for_each(|(r, (o, &b))| {
            *o = (*o - b) * self.d_inv[r / 9];
        });
    }

    pub fn apply(&self, b: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.dim()];
        self.apply_into(b, &mut x);
        x
    }

    /// The constant matrix this factorization inverts, for testing.
    pub fn dense_matrix(&self) -> DMatrix<T> {
        let nq = self.num_q();
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..nq {
            a[(i, i)] = self.mass[i];
        }
        for (r, c, v) in self.j.triplets() {
            a[(nq + r, c)] += v;
            a[(c, nq + r)] += v;
        }
        for r in 0..self.j.nrows() {
            a[(nq + r, nq + r)] = -T::one() / self.d_inv[r / 9];
        }
        a
    }
}
