//! Constant vector/matrix conversion tensors and the operators built from them.
//!
//! Conventions:
//! * 9-vectors are row-major 3×3 matrices, `l[3i + j] = A[i][j]`.
//! * 6-vectors hold symmetric matrices as `(S00, S11, S22, S12, S02, S01)`
//!   with unscaled off-diagonals. Contracting a symmetric matrix with `C`
//!   therefore counts each off-diagonal twice.
//! * The per-element selection matrices are index arithmetic: element `e`
//!   owns rows `9e..9e+9` of `l`, `6e..6e+6` of `s` and the `3v..3v+3` slices
//!   of `q` for its vertices.

use crate::error::MeshError;
use crate::mesh::{ElementKind, SimMesh};
use crate::real::Real;
use crate::sparse::CsrMatrix;
use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector6};
use rayon::prelude::*;

pub type Vector9<T> = SVector<T, 9>;
pub type Matrix9x6<T> = SMatrix<T, 9, 6>;

/// Index pairs `(row, col)` encoded by each of the six symmetric coordinates.
pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

pub fn symmat<T: Real>(s: &Vector6<T>) -> Matrix3<T> {
    Matrix3::new(s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2])
}

/// Inverse of [`symmat`] for a symmetric matrix (reads the upper triangle).
pub fn sym_to_vec<T: Real>(m: &Matrix3<T>) -> Vector6<T> {
    Vector6::new(m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(1, 2)], m[(0, 2)], m[(0, 1)])
}

pub fn matvec9<T: Real>(l: &Vector9<T>) -> Matrix3<T> {
    Matrix3::from_row_slice(l.as_slice())
}

pub fn mat_to_vec9<T: Real>(m: &Matrix3<T>) -> Vector9<T> {
    Vector9::from_iterator((0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])))
}

/// The 9×6 matrix whose column `k` is `vec9(symmat(e_k))`, i.e. `C` flattened.
pub fn sym_basis<T: Real>() -> Matrix9x6<T> {
    let mut c = Matrix9x6::zeros();
    for (k, &(i, j)) in SYM_PAIRS.iter().enumerate() {
        c[(3 * i + j, k)] = T::one();
        c[(3 * j + i, k)] = T::one();
    }
    c
}

/// Dense third-order tensor with shape `(rows, cols, depth)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    /// `(A·b)_ij = Σ_k A_ijk b_k`.
    pub fn dot_vec(&self, b: &[T]) -> DMatrix<T> {
        assert_eq!(b.len(), self.shape[2]);
        DMatrix::from_fn(self.shape[0], self.shape[1], |i, j| {
            (0..self.shape[2]).fold(T::zero(), |acc, k| acc + self.get(i, j, k) * b[k])
        })
    }

    /// `(A:B)_k = Σ_ij A_ijk B_ij`.
    pub fn contract_mat(&self, m: &DMatrix<T>) -> DVector<T> {
        assert_eq!((m.nrows(), m.ncols()), (self.shape[0], self.shape[1]));
        DVector::from_fn(self.shape[2], |k, _| {
            let mut acc = T::zero();
            for i in 0..self.shape[0] {
                for j in 0..self.shape[1] {
                    acc += self.get(i, j, k) * m[(i, j)];
                }
            }
            acc
        })
    }

    /// `(A:B)_kl = Σ_ij A_ijk B_ijl` for two third-order tensors.
    pub fn contract_tensor(&self, other: &Tensor3<T>) -> DMatrix<T> {
        assert_eq!(self.shape[..2], other.shape[..2]);
        DMatrix::from_fn(self.shape[2], other.shape[2], |k, l| {
            let mut acc = T::zero();
            for i in 0..self.shape[0] {
                for j in 0..self.shape[1] {
                    acc += self.get(i, j, k) * other.get(i, j, l);
                }
            }
            acc
        })
    }

    /// `(Aᵀ)_ijk = A_jik`.
    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros([self.shape[1], self.shape[0], self.shape[2]]);
        for i in 0..self.shape[0] {
            for j in 0..self.shape[1] {
                for k in 0..self.shape[2] {
                    t.set(j, i, k, self.get(i, j, k));
                }
            }
        }
        t
    }

    /// Matrix-tensor product `(M A)_ijk = Σ_l M_il A_ljk`.
    pub fn left_mul(&self, m: &DMatrix<T>) -> Self {
        assert_eq!(m.ncols(), self.shape[0]);
        let mut out = Self::zeros([m.nrows(), self.shape[1], self.shape[2]]);
        for i in 0..m.nrows() {
            for j in 0..self.shape[1] {
                for k in 0..self.shape[2] {
                    let v = (0..self.shape[0]).fold(T::zero(), |acc, l| acc + m[(i, l)] * self.get(l, j, k));
                    out.set(i, j, k, v);
                }
            }
        }
        out
    }

    /// Tensor-tensor product `(A·B)_ijkl = Σ_m A_kmi B_lmj`.
    pub fn dot_tensor(&self, other: &Tensor3<T>) -> Tensor4<T> {
        assert_eq!(self.shape[1], other.shape[1]);
        let shape = [self.shape[2], other.shape[2], self.shape[0], other.shape[0]];
        let mut z = Tensor4::zeros(shape);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    for l in 0..shape[3] {
                        let v = (0..self.shape[1])
                            .fold(T::zero(), |acc, m| acc + self.get(k, m, i) * other.get(l, m, j));
                        z.set(i, j, k, l, v);
                    }
                }
            }
        }
        z
    }
}

/// Dense fourth-order tensor (only `Z = B·C` is ever built).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.shape[1] + j) * self.shape[2] + k) * self.shape[3] + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.data[self.index(i, j, k, l)]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: T) {
        let idx = self.index(i, j, k, l);
        self.data[idx] = v;
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    /// `(Z:R)_ij = Σ_kl Z_ijkl R_kl`.
    pub fn contract_mat(&self, m: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(self.shape[0], self.shape[1], |i, j| {
            let mut acc = T::zero();
            for k in 0..self.shape[2] {
                for l in 0..self.shape[3] {
                    acc += self.get(i, j, k, l) * m[(k, l)];
                }
            }
            acc
        })
    }
}

/// The constant tensors `B`, `C`, `Dⁿ` and `Z = B·C` in explicit dense form.
///
/// The fast paths ([`symmat`], [`matvec9`], [`assemble_j`], [`WBlocks`]) never
/// touch these; they exist as the reference the fast paths are checked against.
#[derive(Debug, Clone)]
pub struct VecMatCodec<T> {
    pub b: Tensor3<T>,
    pub c: Tensor3<T>,
    pub d2: Tensor3<T>,
    pub d3: Tensor3<T>,
    pub d4: Tensor3<T>,
    pub z: Tensor4<T>,
}

impl<T: Real> VecMatCodec<T> {
    pub fn new() -> Self {
        let mut b = Tensor3::zeros([3, 3, 9]);
        for i in 0..3 {
            for j in 0..3 {
                b.set(i, j, 3 * i + j, T::one());
            }
        }
        let mut c = Tensor3::zeros([3, 3, 6]);
        for (k, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            c.set(i, j, k, T::one());
            c.set(j, i, k, T::one());
        }
        let z = b.dot_tensor(&c);
        Self {
            b,
            c,
            d2: Self::d_tensor(2),
            d3: Self::d_tensor(3),
            d4: Self::d_tensor(4),
            z,
        }
    }

    /// `Dⁿ_ijk = δ(i, k mod 3) δ(3j, k − i)`.
    pub fn d_tensor(n: usize) -> Tensor3<T> {
        let mut d = Tensor3::zeros([3, n, 3 * n]);
        for i in 0..3 {
            for j in 0..n {
                for k in 0..3 * n {
                    if i == k % 3 && k >= i && 3 * j == k - i {
                        d.set(i, j, k, T::one());
                    }
                }
            }
        }
        d
    }

    pub fn d(&self, n: usize) -> &Tensor3<T> {
        match n {
            2 => &self.d2,
            3 => &self.d3,
            4 => &self.d4,
            _ => panic!("no D tensor for {n} vertices"),
        }
    }
}

impl<T: Real> Default for VecMatCodec<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Assembles the constant map `J` (9|T| × 3|V|) with `(J q)_e = vec9(F_e)`.
///
/// Rows are *not* volume weighted; the saddle system applies `dv_e` itself.
pub fn assemble_j<T: Real>(mesh: &SimMesh<T>) -> CsrMatrix<T> {
    let npe = mesh.nodes_per_element();
    let mut triplets = Vec::with_capacity(mesh.num_elements() * 9 * npe);
    for e in 0..mesh.num_elements() {
        for (&v, g) in mesh.element(e).iter().zip(mesh.grad(e)) {
            for a in 0..3 {
                for b in 0..3 {
                    triplets.push((9 * e + 3 * a + b, 3 * v + a, g[b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(9 * mesh.num_elements(), 3 * mesh.num_vertices(), &triplets)
}

/// Block-diagonal `W` with per-element 9×6 blocks `W_e s = vec9(R_e symmat(s))`.
#[derive(Debug, Clone)]
pub struct WBlocks<T: Real> {
    blocks: Vec<Matrix9x6<T>>,
}

/// `W_e = Z : R` computed directly: column `k` is `vec9(R symmat(e_k))`.
pub fn w_block<T: Real>(r: &Matrix3<T>) -> Matrix9x6<T> {
    let mut w = Matrix9x6::zeros();
    for (k, &(i, j)) in SYM_PAIRS.iter().enumerate() {
        // R symmat(e_k) has column j equal to R's column i, and vice versa.
        for a in 0..3 {
            w[(3 * a + j, k)] += r[(a, i)];
            if i != j {
                w[(3 * a + i, k)] += r[(a, j)];
            }
        }
    }
    w
}

impl<T: Real> WBlocks<T> {
    pub fn assemble(rotations: &[Matrix3<T>]) -> Self {
        Self {
            blocks: rotations.par_iter().map(w_block).collect(),
        }
    }

    /// Refreshes the blocks whose rotation changed.
    pub fn update(&mut self, rotations: &[Matrix3<T>], changed: &[bool]) {
        self.blocks
            .par_iter_mut()
            .zip(rotations.par_iter().zip(changed.par_iter()))
            .for_each(|(w, (r, &c))| {
                if c {
                    *w = w_block(r);
                }
            });
    }

    pub fn update_all(&mut self, rotations: &[Matrix3<T>]) {
        self.blocks.par_iter_mut().zip(rotations.par_iter()).for_each(|(w, r)| *w = w_block(r));
    }

    pub fn block(&self, e: usize) -> &Matrix9x6<T> {
        &self.blocks[e]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `W s` for stacked `s ∈ R^{6|T|}`.
    pub fn apply(&self, s: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); 9 * self.blocks.len()];
        out.par_chunks_mut(9).enumerate().for_each(|(e, o)| {
            let r = self.blocks[e] * Vector6::from_column_slice(&s[6 * e..6 * e + 6]);
            o.copy_from_slice(r.as_slice());
        });
        out
    }

    /// `Wᵀ l` for stacked `l ∈ R^{9|T|}`.
    pub fn apply_transpose(&self, l: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); 6 * self.blocks.len()];
        out.par_chunks_mut(6).enumerate().for_each(|(e, o)| {
            let r = self.blocks[e].transpose() * Vector9::from_column_slice(&l[9 * e..9 * e + 9]);
            o.copy_from_slice(r.as_slice());
        });
        out
    }
}

/// Per-element `vec9(R_e N_e)` with `N_e = n nᵀ` (shells) or `n nᵀ + n′n′ᵀ`
/// (rods): the part of `R_e S_e` that the rank-deficient `F_e` cannot supply.
pub fn normal_rhs_term<T: Real>(mesh: &SimMesh<T>, rotations: &[Matrix3<T>]) -> Result<Vec<T>, MeshError> {
    if mesh.kind() == ElementKind::Tet {
        return Err(MeshError::WrongKind {
            expected: "tri or rod",
            actual: "tet",
        });
    }
    let mut out = vec![T::zero(); 9 * mesh.num_elements()];
    out.par_chunks_mut(9).enumerate().for_each(|(e, o)| {
        let m = rotations[e] * mesh.frame_projector(e);
        o.copy_from_slice(mat_to_vec9(&m).as_slice());
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_tet_mesh, MeshOptions};
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(7)
    }

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let v = nalgebra::Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]))
            .to_rotation_matrix()
            .into_inner()
    }

    fn to_dmat(m: &Matrix3<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
    }

    #[test]
    fn symmat_identity_and_layout() {
        let s = Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(symmat(&s), Matrix3::identity());
        let l = Vector9::from_iterator((1..=9).map(|x| x as f64));
        let m = matvec9(&l);
        assert_eq!((m[(0, 0)], m[(0, 1)], m[(0, 2)]), (1.0, 2.0, 3.0));
        assert_eq!(mat_to_vec9(&m), l);
    }

    #[test]
    fn codec_round_trips() {
        let codec = VecMatCodec::<f64>::new();
        let mut rng = rng();
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-2.0..2.0));
            // B·(B:A) = A
            let back = codec.b.dot_vec(codec.b.contract_mat(&a).as_slice());
            assert!((back - &a).abs().max() < 1e-15);

            let sym = (&a + a.transpose()) * 0.5;
            // C:M doubles the shear entries; halving them recovers s.
            let mut c = codec.c.contract_mat(&sym);
            for k in 3..6 {
                c[k] *= 0.5;
            }
            let s = Vector6::from_column_slice(c.as_slice());
            let m = symmat(&s);
            assert!((to_dmat(&m) - &sym).abs().max() < 1e-15);
            // C·c is symmetric for any c.
            let cc = codec.c.dot_vec(DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0)).as_slice());
            assert!((&cc - cc.transpose()).abs().max() == 0.0);
        }
    }

    #[test]
    fn d_tensor_stacks_columns() {
        let codec = VecMatCodec::<f64>::new();
        for n in 2..=4 {
            let q: Vec<f64> = (0..3 * n).map(|k| k as f64 + 0.5).collect();
            let m = codec.d(n).dot_vec(&q);
            for j in 0..n {
                for i in 0..3 {
                    assert_eq!(m[(i, j)], q[3 * j + i]);
                }
            }
        }
        // The worked example: D³ selects entries 0, 3, 6 in the i=0 slice.
        let d3 = &codec.d3;
        assert_eq!(d3.get(0, 1, 3), 1.0);
        assert_eq!(d3.get(1, 2, 7), 1.0);
        assert_eq!(d3.get(2, 0, 2), 1.0);
    }

    #[test]
    fn w_block_matches_explicit_contraction() {
        let codec = VecMatCodec::<f64>::new();
        let mut rng = rng();
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let explicit = codec.z.contract_mat(&to_dmat(&r));
            let fast = w_block(&r);
            for i in 0..9 {
                for j in 0..6 {
                    assert!((explicit[(i, j)] - fast[(i, j)]).abs() < 1e-15);
                }
            }
            let s = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let expect = mat_to_vec9(&(r * symmat(&s)));
            assert!((fast * s - expect).abs().max() < 1e-12);
        }
    }

    #[test]
    fn w_is_linear_and_identity_case() {
        let mut rng = rng();
        let a = random_rotation(&mut rng);
        let b = random_rotation(&mut rng);
        assert!((w_block(&(a + b)) - w_block(&a) - w_block(&b)).abs().max() < 1e-15);
        let s = Vector6::new(0.3, 1.2, 0.9, 0.1, -0.2, 0.4);
        assert!((w_block(&Matrix3::identity()) * s - mat_to_vec9(&symmat(&s))).abs().max() < 1e-15);
    }

    #[test]
    fn w_update_only_touches_changed_blocks() {
        let mut rng = rng();
        let rots: Vec<_> = (0..3).map(|_| random_rotation(&mut rng)).collect();
        let mut w = WBlocks::assemble(&rots);
        let new: Vec<_> = (0..3).map(|_| random_rotation(&mut rng)).collect();
        w.update(&new, &[false, true, false]);
        assert_eq!(*w.block(0), w_block(&rots[0]));
        assert_eq!(*w.block(1), w_block(&new[1]));
        assert_eq!(*w.block(2), w_block(&rots[2]));
    }

    #[test]
    fn j_single_tet_structure_and_rest() {
        let x = vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()];
        let mesh = SimMesh::<f64>::new(ElementKind::Tet, x, vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        let j = assemble_j(&mesh);
        // The element's 9×12 block couples row (a, b) only to coordinate a of
        // each vertex, so 36 of its 108 entries are stored.
        assert_eq!((j.nrows(), j.ncols(), j.nnz()), (9, 12, 36));
        for (r, c, _) in j.triplets() {
            assert_eq!(r / 3, c % 3);
        }
        let f = j.mul_vec(mesh.rest_vector().as_slice());
        assert!((Vector9::from_column_slice(&f) - mat_to_vec9(&Matrix3::identity())).abs().max() < 1e-15);
    }

    #[test]
    fn j_matches_explicit_tensor_form() {
        // J_e = Bᵀ : (G D^{nT}) evaluated with the dense tensors.
        let codec = VecMatCodec::<f64>::new();
        let (x, t) = box_tet_mesh::<f64>([1, 1, 1], Vector3::new(1.0, 0.7, 1.3), Vector3::zeros());
        let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
        let j = assemble_j(&mesh).to_dense();
        for e in 0..mesh.num_elements() {
            let g = DMatrix::from_fn(4, 3, |r, c| mesh.grad(e)[r][c]);
            let dt = codec.d4.transpose(); // 4×3×12
            let gd = dt.left_mul(&g.transpose()); // (Gᵀ Dᵀ)_{b,a,k} = Σ_v G_vb D_avk
            let local = codec.b.contract_tensor(&gd.transpose()); // 9×12
            for r in 0..9 {
                for (kv, &v) in mesh.element(e).iter().enumerate() {
                    for a in 0..3 {
                        assert!((local[(r, 3 * kv + a)] - j[(9 * e + r, 3 * v + a)]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn normal_term_cases() {
        let x = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        let mesh = SimMesh::new(ElementKind::Tri, x, vec![vec![0, 1, 2]], MeshOptions::default()).unwrap();
        let t = normal_rhs_term(&mesh, &[Matrix3::identity()]).unwrap();
        assert_eq!(Vector9::from_column_slice(&t), mat_to_vec9(&Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 1.0))));

        let r = random_rotation(&mut rng());
        let t = normal_rhs_term(&mesh, &[r]).unwrap();
        let n = Vector3::z();
        assert!((Vector9::from_column_slice(&t) - mat_to_vec9(&(r * n * n.transpose()))).abs().max() < 1e-15);

        let rod = SimMesh::<f64>::new(ElementKind::Rod, vec![Vector3::zeros(), Vector3::x()], vec![vec![0, 1]], MeshOptions::default()).unwrap();
        let t = normal_rhs_term(&rod, &[Matrix3::identity()]).unwrap();
        let (n, b) = (rod.ref_normal(0).unwrap(), rod.ref_binormal(0).unwrap());
        let expect = n * n.transpose() + b * b.transpose();
        assert!((Vector9::from_column_slice(&t) - mat_to_vec9(&expect)).abs().max() < 1e-15);

        let tet = SimMesh::<f64>::new(ElementKind::Tet, vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()], vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        assert!(normal_rhs_term(&tet, &[Matrix3::identity()]).is_err());
    }
}
