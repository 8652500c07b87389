use super::Matrix9;
use crate::real::Real;
use crate::sparse::CsrMatrix;
use nalgebra::{DMatrix, SVector};
use rayon::prelude::*;
use std::sync::Arc;

/// ```text
/// ⎡ M/h² + K    Jᵀ ⎤ ⎡Δq⎤   ⎡b_q⎤
/// ⎣    J       −C  ⎦ ⎣ l⎦ = ⎣b_l⎦
/// ```
///
/// over the free position DOFs and all `9|T|` multipliers. `J` is volume
/// weighted and restricted to free columns, `C` holds the per-element
/// compliance blocks `dv (W H⁻¹ Wᵀ) + tikhonov`, and `K` is an optional
/// diagonal (contact penalty) added to the mass block.
#[derive(Debug, Clone)]
pub struct SaddleSystem<T: Real> {
    pub(crate) mass: Vec<T>,
    pub(crate) j: Arc<CsrMatrix<T>>,
    pub(crate) jt: Arc<CsrMatrix<T>>,
    pub(crate) compliance: Vec<Matrix9<T>>,
    pub(crate) residual_weights: Vec<T>,
}

impl<T: Real> SaddleSystem<T> {
    /// `residual_weights[e]` scales element `e`'s multiplier rows in the
    /// residual norm used for convergence tests.
    pub fn new(
        mass: Vec<T>,
        j: Arc<CsrMatrix<T>>,
        jt: Arc<CsrMatrix<T>>,
        compliance: Vec<Matrix9<T>>,
        residual_weights: Vec<T>,
    ) -> Self {
        assert_eq!(mass.len(), j.ncols());
        assert_eq!(j.nrows(), 9 * compliance.len());
        assert_eq!(residual_weights.len(), compliance.len());
        Self {
            mass,
            j,
            jt,
            compliance,
            residual_weights,
        }
    }

    pub fn num_q(&self) -> usize {
        self.mass.len()
    }

    pub fn num_l(&self) -> usize {
        self.j.nrows()
    }

    pub fn dim(&self) -> usize {
        self.num_q() + self.num_l()
    }

    pub fn compliance_block(&self, e: usize) -> &Matrix9<T> {
        &self.compliance[e]
    }

    pub fn apply_into(&self, x: &[T], y: &mut [T]) {
        let nq = self.num_q();
        let (xq, xl) = x.split_at(nq);
        let (yq, yl) = y.split_at_mut(nq);
        self.jt.mul_vec_into(xl, yq);
        yq.par_iter_mut()
            .zip(self.mass.par_iter().zip(xq.par_iter()))
            .for_each(|(y, (m, x))| *y += *m * *x);
        self.j.mul_vec_into(xq, yl);
        yl.par_chunks_mut(9)
            .zip(xl.par_chunks(9))
            .zip(self.compliance.par_iter())
            .for_each(|((y, x), c)| {
                let cx = c * SVector::<T, 9>::from_column_slice(x);
                for (yi, ci) in y.iter_mut().zip(cx.iter()) {
                    *yi -= *ci;
                }
            });
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    /// Weighted Euclidean norm that puts both block rows in force units.
    pub fn residual_norm(&self, r: &[T]) -> T {
        let nq = self.num_q();
        let mut acc = r[..nq].iter().fold(T::zero(), |a, &v| a + v * v);
        for (e, chunk) in r[nq..].chunks(9).enumerate() {
            let w = self.residual_weights[e];
            acc += chunk.iter().fold(T::zero(), |a, &v| a + v * v) * w * w;
        }
        acc.sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let (nq, n) = (self.num_q(), self.dim());
        let mut a = DMatrix::zeros(n, n);
        for i in 0..nq {
            a[(i, i)] = self.mass[i];
        }
        for (r, c, v) in self.j.triplets() {
            a[(nq + r, c)] += v;
            a[(c, nq + r)] += v;
        }
        for (e, c) in self.compliance.iter().enumerate() {
            for i in 0..9 {
                for k in 0..9 {
                    a[(nq + 9 * e + i, nq + 9 * e + k)] -= c[(i, k)];
                }
            }
        }
        a
    }
}
