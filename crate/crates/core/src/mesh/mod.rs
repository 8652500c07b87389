//! Simulation meshes and per-element rest geometry.
//!
//! Every element carries a gradient operator `G` (one row per element vertex)
//! such that the deformation gradient of the element is `F = Σ_v x_v G_vᵀ`,
//! an integration measure, and (for shells and rods) a reference frame used to
//! complete the rank-deficient `F` to a full 3×3 map.

mod generate;
mod io;

pub use generate::{ball_tet_mesh, box_tet_mesh, boundary_triangles, unique_edges};
pub use io::{load_mesh, parse_edge_list, parse_obj, parse_tet_pair, read_mesh_file, write_obj_frame};

use crate::error::MeshError;
use crate::real::Real;
use nalgebra::{Matrix2, Matrix3, SMatrix, Vector3};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Tet,
    Tri,
    Rod,
}

impl ElementKind {
    pub fn nodes(self) -> usize {
        match self {
            ElementKind::Tet => 4,
            ElementKind::Tri => 3,
            ElementKind::Rod => 2,
        }
    }

    /// Dimension of the element's rest measure (3 for volume, 2 area, 1 length).
    pub fn dim(self) -> i32 {
        match self {
            ElementKind::Tet => 3,
            ElementKind::Tri => 2,
            ElementKind::Rod => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Tet => "tet",
            ElementKind::Tri => "tri",
            ElementKind::Rod => "rod",
        }
    }
}

impl std::str::FromStr for ElementKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tet" => Ok(ElementKind::Tet),
            "tri" => Ok(ElementKind::Tri),
            "rod" => Ok(ElementKind::Rod),
            other => Err(format!("unknown element kind `{other}` (expected tet, tri or rod)")),
        }
    }
}

/// Thickness and cross-section used to turn shell areas and rod lengths into volumes.
#[derive(Debug, Clone, Copy)]
pub struct MeshOptions {
    pub thickness: f64,
    pub cross_section: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            thickness: 1e-3,
            cross_section: 1e-6,
        }
    }
}

/// Relative threshold below which an element measure counts as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SimMesh<T: Real> {
    kind: ElementKind,
    rest_positions: Vec<Vector3<T>>,
    connectivity: Vec<usize>,
    grad_rows: Vec<Vector3<T>>,
    volumes: Vec<T>,
    ref_normals: Vec<Vector3<T>>,
    ref_binormals: Vec<Vector3<T>>,
}

impl<T: Real> SimMesh<T> {
    /// Builds a mesh and all derived geometry.
    ///
    /// Tets with negative orientation are reoriented by swapping their last two
    /// vertices. Elements whose rest measure falls below `DEGENERATE_EPS` times
    /// the matching power of the bounding-box diagonal are rejected.
    pub fn new(
        kind: ElementKind,
        rest_positions: Vec<Vector3<T>>,
        elements: Vec<Vec<usize>>,
        options: MeshOptions,
    ) -> Result<Self, MeshError> {
        if elements.is_empty() {
            return Err(MeshError::Empty);
        }
        let nv = rest_positions.len();
        let npe = kind.nodes();
        let mut connectivity = Vec::with_capacity(elements.len() * npe);
        for (e, el) in elements.iter().enumerate() {
            if el.len() != npe {
                return Err(MeshError::Arity {
                    element: e,
                    found: el.len(),
                    expected: npe,
                });
            }
            for &v in el {
                if v >= nv {
                    return Err(MeshError::BadIndex {
                        element: e,
                        vertex: v,
                        count: nv,
                    });
                }
            }
            connectivity.extend_from_slice(el);
        }

        let diag = bbox_diagonal(&rest_positions).as_f64().max(f64::MIN_POSITIVE);
        let threshold = DEGENERATE_EPS * diag.powi(kind.dim());

        if kind == ElementKind::Tet {
            for el in connectivity.chunks_mut(4) {
                let t = edge_matrix(&rest_positions, el);
                if t.determinant() < T::zero() {
                    el.swap(2, 3);
                }
            }
        }

        let per_element: Vec<Result<ElementGeometry<T>, MeshError>> = connectivity
            .par_chunks(npe)
            .enumerate()
            .map(|(e, el)| element_geometry(kind, &rest_positions, el, e, threshold, options))
            .collect();

        let mut grad_rows = Vec::with_capacity(connectivity.len());
        let mut volumes = Vec::with_capacity(elements.len());
        let mut ref_normals = Vec::new();
        let mut ref_binormals = Vec::new();
        for geo in per_element {
            let geo = geo?;
            grad_rows.extend_from_slice(&geo.grad[..npe]);
            volumes.push(geo.volume);
            if let Some(n) = geo.normal {
                ref_normals.push(n);
            }
            if let Some(b) = geo.binormal {
                ref_binormals.push(b);
            }
        }

        Ok(Self {
            kind,
            rest_positions,
            connectivity,
            grad_rows,
            volumes,
            ref_normals,
            ref_binormals,
        })
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn num_elements(&self) -> usize {
        self.volumes.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.kind.nodes()
    }

    pub fn rest_positions(&self) -> &[Vector3<T>] {
        &self.rest_positions
    }

    /// Stacked rest position vector `X ∈ R^{3|V|}`.
    pub fn rest_vector(&self) -> nalgebra::DVector<T> {
        stack(&self.rest_positions)
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.kind.nodes();
        &self.connectivity[e * n..(e + 1) * n]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks(self.kind.nodes())
    }

    /// Rows of the element gradient operator, one per element vertex.
    pub fn grad(&self, e: usize) -> &[Vector3<T>] {
        let n = self.kind.nodes();
        &self.grad_rows[e * n..(e + 1) * n]
    }

    pub fn volume(&self, e: usize) -> T {
        self.volumes[e]
    }

    pub fn volumes(&self) -> &[T] {
        &self.volumes
    }

    /// Reference normal (shells and rods), `None` for tets.
    pub fn ref_normal(&self, e: usize) -> Option<Vector3<T>> {
        self.ref_normals.get(e).copied()
    }

    /// Reference binormal (rods only).
    pub fn ref_binormal(&self, e: usize) -> Option<Vector3<T>> {
        self.ref_binormals.get(e).copied()
    }

    /// The rest-frame completion `N_i = n nᵀ (+ n′ n′ᵀ)`; zero for tets.
    pub fn frame_projector(&self, e: usize) -> Matrix3<T> {
        let mut p = Matrix3::zeros();
        if let Some(n) = self.ref_normal(e) {
            p += n * n.transpose();
        }
        if let Some(b) = self.ref_binormal(e) {
            p += b * b.transpose();
        }
        p
    }

    /// Deformation gradient of element `e` for stacked positions `q`.
    pub fn deformation_gradient(&self, e: usize, q: &[T]) -> Matrix3<T> {
        let mut f = Matrix3::zeros();
        for (&v, g) in self.element(e).iter().zip(self.grad(e)) {
            let x = Vector3::new(q[3 * v], q[3 * v + 1], q[3 * v + 2]);
            f += x * g.transpose();
        }
        f
    }

    pub fn bbox_diagonal(&self) -> T {
        bbox_diagonal(&self.rest_positions)
    }

    pub fn total_volume(&self) -> T {
        self.volumes.iter().fold(T::zero(), |a, &b| a + b)
    }
}

struct ElementGeometry<T: Real> {
    grad: [Vector3<T>; 4],
    volume: T,
    normal: Option<Vector3<T>>,
    binormal: Option<Vector3<T>>,
}

fn element_geometry<T: Real>(
    kind: ElementKind,
    x: &[Vector3<T>],
    el: &[usize],
    index: usize,
    threshold: f64,
    options: MeshOptions,
) -> Result<ElementGeometry<T>, MeshError> {
    let degenerate = |measure: T| MeshError::Degenerate {
        element: index,
        measure: measure.as_f64(),
        threshold,
    };
    let mut grad = [Vector3::zeros(); 4];
    match kind {
        ElementKind::Tet => {
            let t = edge_matrix(x, el);
            let vol = t.determinant().abs() / T::lit(6.0);
            if vol.as_f64() <= threshold {
                return Err(degenerate(vol));
            }
            let g = tet_gradient(&t).ok_or_else(|| degenerate(vol))?;
            for (k, row) in grad.iter_mut().enumerate() {
                *row = g.row(k).transpose();
            }
            Ok(ElementGeometry {
                grad,
                volume: vol,
                normal: None,
                binormal: None,
            })
        }
        ElementKind::Tri => {
            let e0 = x[el[1]] - x[el[0]];
            let e1 = x[el[2]] - x[el[0]];
            let cross = e0.cross(&e1);
            let area = cross.norm() / T::lit(2.0);
            if area.as_f64() <= threshold {
                return Err(degenerate(area));
            }
            let t = SMatrix::<T, 3, 2>::from_columns(&[e0, e1]);
            let g = tri_gradient(&t).ok_or_else(|| degenerate(area))?;
            for (k, row) in grad.iter_mut().take(3).enumerate() {
                *row = g.row(k).transpose();
            }
            Ok(ElementGeometry {
                grad,
                volume: area * T::lit(options.thickness),
                normal: Some(cross / cross.norm()),
                binormal: None,
            })
        }
        ElementKind::Rod => {
            let e = x[el[1]] - x[el[0]];
            let len = e.norm();
            if len.as_f64() <= threshold {
                return Err(degenerate(len));
            }
            let g = rod_gradient(&e).ok_or_else(|| degenerate(len))?;
            grad[0] = g.row(0).transpose();
            grad[1] = g.row(1).transpose();
            let (n, b) = rod_frame(&e);
            Ok(ElementGeometry {
                grad,
                volume: len * T::lit(options.cross_section),
                normal: Some(n),
                binormal: Some(b),
            })
        }
    }
}

fn edge_matrix<T: Real>(x: &[Vector3<T>], el: &[usize]) -> Matrix3<T> {
    Matrix3::from_columns(&[x[el[1]] - x[el[0]], x[el[2]] - x[el[0]], x[el[3]] - x[el[0]]])
}

fn bbox_diagonal<T: Real>(x: &[Vector3<T>]) -> T {
    let Some(first) = x.first() else {
        return T::zero();
    };
    let (mut lo, mut hi) = (*first, *first);
    for p in x {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

pub(crate) fn stack<T: Real>(x: &[Vector3<T>]) -> nalgebra::DVector<T> {
    nalgebra::DVector::from_iterator(3 * x.len(), x.iter().flat_map(|p| [p.x, p.y, p.z]))
}

/// Tetrahedron gradient operator `(−𝟙T⁻¹; T⁻¹)` for the edge matrix `T`
/// whose columns are the three edges leaving vertex 0.
pub fn tet_gradient<T: Real>(edges: &Matrix3<T>) -> Option<SMatrix<T, 4, 3>> {
    let inv = edges.try_inverse()?;
    let mut g = SMatrix::<T, 4, 3>::zeros();
    for c in 0..3 {
        g[(0, c)] = -(inv[(0, c)] + inv[(1, c)] + inv[(2, c)]);
        for r in 0..3 {
            g[(r + 1, c)] = inv[(r, c)];
        }
    }
    Some(g)
}

/// Triangle gradient operator built from the pseudo-inverse `(TᵀT)⁻¹Tᵀ`
/// of the 3×2 edge matrix.
pub fn tri_gradient<T: Real>(edges: &SMatrix<T, 3, 2>) -> Option<Matrix3<T>> {
    let gram: Matrix2<T> = edges.transpose() * edges;
    let pinv = gram.try_inverse()? * edges.transpose();
    let mut g = Matrix3::zeros();
    for c in 0..3 {
        g[(0, c)] = -(pinv[(0, c)] + pinv[(1, c)]);
        g[(1, c)] = pinv[(0, c)];
        g[(2, c)] = pinv[(1, c)];
    }
    Some(g)
}

/// Rod gradient operator `(−eᵀ/|e|²; eᵀ/|e|²)`.
pub fn rod_gradient<T: Real>(edge: &Vector3<T>) -> Option<SMatrix<T, 2, 3>> {
    let len2 = edge.norm_squared();
    if len2 <= T::zero() {
        return None;
    }
    let row = edge / len2;
    Some(SMatrix::<T, 2, 3>::from_rows(&[-row.transpose(), row.transpose()]))
}

/// Orthonormal pair perpendicular to a rod edge: `n = normalize(e × a)` with
/// `a` the coordinate axis least aligned with `e` (lowest index on ties), `n′ = e × n`.
pub fn rod_frame<T: Real>(edge: &Vector3<T>) -> (Vector3<T>, Vector3<T>) {
    let e = edge.normalize();
    let mut axis = 0;
    for k in 1..3 {
        if e[k].abs() < e[axis].abs() {
            axis = k;
        }
    }
    let n = e.cross(&Vector3::ith(axis, T::one())).normalize();
    let b = e.cross(&n);
    (n, b)
}

/// Per-element `(n, n′)` reference frames; `n′` is `None` for shells.
pub fn reference_frames<T: Real>(
    mesh: &SimMesh<T>,
) -> Result<Vec<(Vector3<T>, Option<Vector3<T>>)>, MeshError> {
    if mesh.kind() == ElementKind::Tet {
        return Err(MeshError::WrongKind {
            expected: "tri or rod",
            actual: "tet",
        });
    }
    Ok((0..mesh.num_elements())
        .map(|e| (mesh.ref_normal(e).unwrap(), mesh.ref_binormal(e)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector4};

    fn sample_rotation() -> Matrix3<f64> {
        let q = Vector4::new(0.3, -0.5, 0.7, 0.2).normalize();
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
            .to_rotation_matrix()
            .into_inner()
    }

    fn tet_positions() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.1, 0.0, 0.2),
            Vector3::new(1.3, 0.1, 0.0),
            Vector3::new(0.2, 0.9, 0.1),
            Vector3::new(0.0, 0.3, 1.1),
        ]
    }

    fn q_of(x: &[Vector3<f64>]) -> Vec<f64> {
        x.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    #[test]
    fn tet_rest_gradient_is_identity() {
        let x = tet_positions();
        let mesh = SimMesh::new(ElementKind::Tet, x.clone(), vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        let f = mesh.deformation_gradient(0, &q_of(&x));
        assert!((f - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn tet_rotated_gradient_is_rotation() {
        let x = tet_positions();
        let r = sample_rotation();
        let mesh = SimMesh::new(ElementKind::Tet, x.clone(), vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        let xr: Vec<_> = x.iter().map(|p| r * p + Vector3::new(1.0, 2.0, 3.0)).collect();
        let f = mesh.deformation_gradient(0, &q_of(&xr));
        assert!((f - r).abs().max() < 1e-12);
    }

    #[test]
    fn tet_volume_matches_determinant() {
        let x = tet_positions();
        let t = Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
        let mesh = SimMesh::new(ElementKind::Tet, x, vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        assert!((mesh.volume(0) - t.determinant().abs() / 6.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_tet_is_reoriented() {
        let x = tet_positions();
        let mesh = SimMesh::new(ElementKind::Tet, x.clone(), vec![vec![0, 2, 1, 3]], MeshOptions::default()).unwrap();
        assert_eq!(mesh.element(0), &[0, 2, 3, 1]);
        let f = mesh.deformation_gradient(0, &q_of(&x));
        assert!((f - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn coplanar_tet_is_rejected_with_index() {
        let mut x = tet_positions();
        x.push(Vector3::new(0.5, 0.5, 0.0));
        x.push(Vector3::new(1.0, 0.0, 0.0));
        x.push(Vector3::new(0.0, 1.0, 0.0));
        x.push(Vector3::new(1.0, 1.0, 0.0));
        let err = SimMesh::new(
            ElementKind::Tet,
            x,
            vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]],
            MeshOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MeshError::Degenerate { element: 1, .. }), "{err}");
    }

    #[test]
    fn unit_right_triangle_volume() {
        let x = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        let opts = MeshOptions {
            thickness: 1.0,
            ..Default::default()
        };
        let mesh = SimMesh::<f64>::new(ElementKind::Tri, x, vec![vec![0, 1, 2]], opts).unwrap();
        assert!((mesh.volume(0) - 0.5).abs() < 1e-15);
        assert_eq!(mesh.ref_normal(0).unwrap(), Vector3::z());
    }

    #[test]
    fn triangle_rest_gradient_singular_values() {
        let x = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.2, 0.3),
            Vector3::new(-0.1, 0.8, 0.5),
        ];
        let mesh = SimMesh::new(ElementKind::Tri, x.clone(), vec![vec![0, 1, 2]], MeshOptions::default()).unwrap();
        let f = mesh.deformation_gradient(0, &q_of(&x));
        let mut sv: Vec<f64> = f.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sv[0] - 1.0).abs() < 1e-12 && (sv[1] - 1.0).abs() < 1e-12 && sv[2].abs() < 1e-12);
        // Rest edges are fixed by F.
        for e in [x[1] - x[0], x[2] - x[0]] {
            assert!((f * e - e).norm() < 1e-12);
        }
        let n = mesh.ref_normal(0).unwrap();
        assert!((f * n).norm() < 1e-12);
    }

    #[test]
    fn rod_stretch_gradient() {
        let d = Vector3::new(1.0, 2.0, -0.5).normalize();
        let len = 0.7;
        let x = vec![Vector3::new(0.3, 0.1, 0.0), Vector3::new(0.3, 0.1, 0.0) + d * len];
        let mesh = SimMesh::new(ElementKind::Rod, x.clone(), vec![vec![0, 1]], MeshOptions::default()).unwrap();
        let xs = vec![x[0], x[0] + d * (2.0 * len)];
        let f = mesh.deformation_gradient(0, &q_of(&xs));
        assert!((f - 2.0 * d * d.transpose()).abs().max() < 1e-12);
        assert!((mesh.volume(0) - len * 1e-6).abs() < 1e-18);
    }

    #[test]
    fn gradients_annihilate_constants() {
        let g3 = tet_gradient(&Matrix3::new(1.0, 0.2, 0.1, 0.0, 0.9, 0.3, 0.2, 0.1, 1.2)).unwrap();
        let g2 = tri_gradient(&SMatrix::<f64, 3, 2>::new(1.0, 0.2, 0.1, 0.9, 0.3, 0.4)).unwrap();
        let g1 = rod_gradient(&Vector3::new(0.3, -0.2, 0.9)).unwrap();
        assert!(g3.row_sum().norm() < 1e-14);
        assert!(g2.row_sum().norm() < 1e-14);
        assert!(g1.row_sum().norm() < 1e-14);
    }

    #[test]
    fn rod_frame_along_x() {
        let (n, b) = rod_frame(&Vector3::new(1.0f64, 0.0, 0.0));
        assert!(n.dot(&Vector3::x()).abs() < 1e-15);
        assert!(b.dot(&Vector3::x()).abs() < 1e-15);
        assert!(n.dot(&b).abs() < 1e-15);
        assert!((n.norm() - 1.0).abs() < 1e-15 && (b.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_frames_reject_tets() {
        let mesh = SimMesh::new(ElementKind::Tet, tet_positions(), vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        assert!(reference_frames(&mesh).is_err());
    }

    #[test]
    fn shell_frames_rotate_with_the_mesh() {
        let r = sample_rotation();
        let x = vec![Vector3::zeros(), Vector3::x(), Vector3::new(0.2, 1.0, 0.0)];
        let xr: Vec<_> = x.iter().map(|p| r * p).collect();
        let a = SimMesh::new(ElementKind::Tri, x, vec![vec![0, 1, 2]], MeshOptions::default()).unwrap();
        let b = SimMesh::new(ElementKind::Tri, xr, vec![vec![0, 1, 2]], MeshOptions::default()).unwrap();
        assert!((r * a.ref_normal(0).unwrap() - b.ref_normal(0).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn rod_frame_plane_rotates_with_the_mesh() {
        // Individual (n, n′) depend on the axis pick; the plane they span does not.
        let r = sample_rotation();
        let x = vec![Vector3::zeros(), Vector3::new(0.3, 1.0, -0.4)];
        let xr: Vec<_> = x.iter().map(|p| r * p).collect();
        let a = SimMesh::new(ElementKind::Rod, x, vec![vec![0, 1]], MeshOptions::default()).unwrap();
        let b = SimMesh::new(ElementKind::Rod, xr, vec![vec![0, 1]], MeshOptions::default()).unwrap();
        let pa = r * a.frame_projector(0) * r.transpose();
        assert!((pa - b.frame_projector(0)).abs().max() < 1e-12);
    }
}
