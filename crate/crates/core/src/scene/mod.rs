//! Boundary conditions, external forces and mass for a simulation, plus the
//! declarative scene file that describes them.

mod config;

pub use config::{
    GeneratorConfig, GroundConfig, KeyframeConfig, MaterialConfig, MeshConfig, PinConfig, SceneConfig, SelectBox,
    SolverConfig,
};

use crate::error::SceneError;
use crate::materials::MaterialParams;
use crate::mesh::{boundary_triangles, unique_edges, ElementKind, SimMesh};
use crate::real::Real;
use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;
use std::sync::Arc;

/// Horizontal ground plane `y = height` with a one-sided linear penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ground<T> {
    pub height: T,
    /// Spring constant per penetrating vertex, N/m.
    pub stiffness: T,
    /// Damping per penetrating vertex, N·s/m.
    pub damping: T,
}

impl<T: Real> Ground<T> {
    pub fn new(height: T, stiffness: T, damping: T) -> Self {
        Self {
            height,
            stiffness,
            damping,
        }
    }

    /// Depth of `y` below the plane, zero above it.
    pub fn penetration(&self, y: T) -> T {
        let d = self.height - y;
        if d > T::zero() {
            d
        } else {
            T::zero()
        }
    }
}

/// Penalty force on every vertex: `k·d` upward for a vertex `d` below the
/// plane, minus `c·v_y` when a velocity is given. Zero above the plane.
pub fn contact_force<T: Real>(q: &[T], velocity: Option<&[T]>, ground: &Ground<T>) -> Vec<T> {
    let mut f = vec![T::zero(); q.len()];
    f.par_chunks_mut(3).enumerate().for_each(|(i, fi)| {
        let d = ground.penetration(q[3 * i + 1]);
        if d > T::zero() {
            let damp = velocity.map_or(T::zero(), |v| ground.damping * v[3 * i + 1]);
            fi[1] = ground.stiffness * d - damp;
        }
    });
    f
}

/// Contact as an implicit potential over one timestep.
///
/// For penetration `d(q)` and start-of-step penetration `dᵗ` the per-vertex
/// potential is `k/2 d² + c/(2h) (d − dᵗ)²`. Its negative gradient is the
/// spring force plus `−c·v_y` while the vertex stays in contact, and it is
/// continuous in `q`.
#[derive(Debug, Clone)]
pub struct ContactTerms<T> {
    pub energy: T,
    /// Gradient with respect to the full position vector.
    pub gradient: Vec<T>,
    /// Diagonal of the Hessian (nonzero only on penetrating `y` entries).
    pub stiffness: Vec<T>,
}

pub fn contact_terms<T: Real>(q: &[T], q_start: &[T], ground: &Ground<T>, h: T) -> ContactTerms<T> {
    let n = q.len();
    let mut gradient = vec![T::zero(); n];
    let mut stiffness = vec![T::zero(); n];
    let mut energy = T::zero();
    let c = ground.damping / h;
    let half = T::lit(0.5);
    for i in 0..n / 3 {
        let d = ground.penetration(q[3 * i + 1]);
        let d0 = ground.penetration(q_start[3 * i + 1]);
        energy += half * ground.stiffness * d * d + half * c * (d - d0) * (d - d0);
        if d > T::zero() {
            gradient[3 * i + 1] = -(ground.stiffness * d + c * (d - d0));
            stiffness[3 * i + 1] = ground.stiffness + c;
        }
    }
    ContactTerms {
        energy,
        gradient,
        stiffness,
    }
}

/// Energy only, for line-search trials.
pub fn contact_energy<T: Real>(q: &[T], q_start: &[T], ground: &Ground<T>, h: T) -> T {
    let c = ground.damping / h;
    let half = T::lit(0.5);
    (0..q.len() / 3).fold(T::zero(), |acc, i| {
        let d = ground.penetration(q[3 * i + 1]);
        let d0 = ground.penetration(q_start[3 * i + 1]);
        acc + half * ground.stiffness * d * d + half * c * (d - d0) * (d - d0)
    })
}

/// Lumped mass: each element's `ρ·dv` split evenly over its vertices, repeated
/// on all three coordinates. Returns the `3|V|` diagonal.
pub fn lumped_mass<T: Real>(mesh: &SimMesh<T>, density: T) -> Result<Vec<T>, SceneError> {
    if !(density > T::zero()) || !density.is_finite() {
        return Err(SceneError::Field {
            field: "material.ρ".into(),
            message: format!("density must be positive, got {density}"),
        });
    }
    let share = T::one() / T::from_usize_lossy(mesh.nodes_per_element());
    let mut m = vec![T::zero(); 3 * mesh.num_vertices()];
    for e in 0..mesh.num_elements() {
        let me = density * mesh.volume(e) * share;
        for &v in mesh.element(e) {
            for a in 0..3 {
                m[3 * v + a] += me;
            }
        }
    }
    if let Some(v) = (0..mesh.num_vertices()).find(|&v| m[3 * v] == T::zero()) {
        return Err(SceneError::Field {
            field: "mesh".into(),
            message: format!("vertex {v} belongs to no element and would have zero mass"),
        });
    }
    Ok(m)
}

/// Prescribed motion of a pin group.
#[derive(Debug, Clone, PartialEq)]
pub enum PinMotion<T> {
    Static,
    /// Constant velocity, m/s.
    Velocity(Vector3<T>),
    /// Piecewise-linear rigid motion about the group's initial centroid.
    Keyframes(Vec<Keyframe<T>>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe<T> {
    pub time: T,
    pub translation: Vector3<T>,
    /// Axis-angle rotation vector, radians.
    pub rotation: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinGroup<T> {
    pub vertices: Vec<usize>,
    pub motion: PinMotion<T>,
}

impl<T: Real> PinGroup<T> {
    pub fn fixed(vertices: Vec<usize>) -> Self {
        Self {
            vertices,
            motion: PinMotion::Static,
        }
    }

    pub fn moving(vertices: Vec<usize>, velocity: Vector3<T>) -> Self {
        Self {
            vertices,
            motion: PinMotion::Velocity(velocity),
        }
    }

    /// Positions of the group's vertices at time `t`, given their initial
    /// positions `x0` (indexed by global vertex).
    pub fn positions_at(&self, x0: &[Vector3<T>], t: T) -> Vec<Vector3<T>> {
        match &self.motion {
            PinMotion::Static => self.vertices.iter().map(|&v| x0[v]).collect(),
            PinMotion::Velocity(vel) => self.vertices.iter().map(|&v| x0[v] + vel * t).collect(),
            PinMotion::Keyframes(keys) => {
                let (translation, rotation) = interpolate_keys(keys, t);
                let rot = Rotation3::from_scaled_axis(rotation);
                let centroid = self.vertices.iter().fold(Vector3::zeros(), |a, &v| a + x0[v])
                    / T::from_usize_lossy(self.vertices.len().max(1));
                self.vertices
                    .iter()
                    .map(|&v| centroid + rot * (x0[v] - centroid) + translation)
                    .collect()
            }
        }
    }
}

fn interpolate_keys<T: Real>(keys: &[Keyframe<T>], t: T) -> (Vector3<T>, Vector3<T>) {
    match keys {
        [] => (Vector3::zeros(), Vector3::zeros()),
        [k] => (k.translation, k.rotation),
        _ => {
            if t <= keys[0].time {
                return (keys[0].translation, keys[0].rotation);
            }
            for w in keys.windows(2) {
                if t <= w[1].time {
                    let span = w[1].time - w[0].time;
                    let a = if span > T::zero() { (t - w[0].time) / span } else { T::one() };
                    return (
                        w[0].translation.lerp(&w[1].translation, a),
                        w[0].rotation.lerp(&w[1].rotation, a),
                    );
                }
            }
            let last = keys[keys.len() - 1];
            (last.translation, last.rotation)
        }
    }
}

/// Splits the `3|V|` position vector into free and pinned coordinates.
/// Pinning is per vertex: all three coordinates of a pinned vertex are removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofProjection {
    full: usize,
    free: Vec<usize>,
    pinned: Vec<usize>,
}

pub fn build_projection(pinned_vertices: &[usize], num_vertices: usize) -> Result<DofProjection, SceneError> {
    DofProjection::new(pinned_vertices, num_vertices)
}

impl DofProjection {
    pub fn new(pinned_vertices: &[usize], num_vertices: usize) -> Result<Self, SceneError> {
        let mut is_pinned = vec![false; num_vertices];
        for &v in pinned_vertices {
            if v >= num_vertices {
                return Err(SceneError::PinIndex {
                    vertex: v,
                    count: num_vertices,
                });
            }
            is_pinned[v] = true;
        }
        let (mut free, mut pinned) = (Vec::new(), Vec::new());
        for (v, &p) in is_pinned.iter().enumerate() {
            let list = if p { &mut pinned } else { &mut free };
            list.extend([3 * v, 3 * v + 1, 3 * v + 2]);
        }
        Ok(Self {
            full: 3 * num_vertices,
            free,
            pinned,
        })
    }

    pub fn full_dim(&self) -> usize {
        self.full
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn pinned_dofs(&self) -> &[usize] {
        &self.pinned
    }

    /// Free coordinates of a full vector.
    pub fn project<T: Copy>(&self, full: &[T]) -> Vec<T> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Full vector whose free coordinates come from `free` and pinned ones
    /// from `base`.
    pub fn unproject<T: Copy>(&self, free: &[T], base: &[T]) -> Vec<T> {
        let mut out = base.to_vec();
        for (&i, &v) in self.free.iter().zip(free) {
            out[i] = v;
        }
        out
    }

    /// Adds the free-coordinate increment `delta` into `full`.
    pub fn add_free<T: Real>(&self, full: &mut [T], delta: &[T], scale: T) {
        for (&i, &d) in self.free.iter().zip(delta) {
            full[i] += scale * d;
        }
    }
}

/// Everything about a simulation except solver settings.
#[derive(Debug, Clone)]
pub struct Scene<T: Real> {
    pub mesh: Arc<SimMesh<T>>,
    pub material: MaterialParams<T>,
    /// m/s².
    pub gravity: Vector3<T>,
    pub pins: Vec<PinGroup<T>>,
    pub ground: Option<Ground<T>>,
    /// Uniform initial velocity, m/s.
    pub initial_velocity: Vector3<T>,
    /// Initial positions; the rest positions unless perturbed.
    pub initial_positions: Vec<Vector3<T>>,
}

impl<T: Real> Scene<T> {
    /// No gravity, pins or ground; starts at rest.
    pub fn new(mesh: SimMesh<T>, material: MaterialParams<T>) -> Self {
        let initial_positions = mesh.rest_positions().to_vec();
        Self {
            mesh: Arc::new(mesh),
            material,
            gravity: Vector3::zeros(),
            pins: Vec::new(),
            ground: None,
            initial_velocity: Vector3::zeros(),
            initial_positions,
        }
    }

    pub fn with_gravity(mut self, g: Vector3<T>) -> Self {
        self.gravity = g;
        self
    }

    pub fn with_pins(mut self, pins: Vec<PinGroup<T>>) -> Self {
        self.pins = pins;
        self
    }

    pub fn with_ground(mut self, ground: Ground<T>) -> Self {
        self.ground = Some(ground);
        self
    }

    pub fn with_velocity(mut self, v: Vector3<T>) -> Self {
        self.initial_velocity = v;
        self
    }

    pub fn pinned_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pins.iter().flat_map(|p| p.vertices.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Vertices inside the axis-aligned box `[lo, hi]` (inclusive) at rest.
    pub fn select_vertices(&self, lo: Vector3<T>, hi: Vector3<T>) -> Vec<usize> {
        select_in_box(self.mesh.rest_positions(), lo, hi)
    }

    /// Triangles and polylines for frame output: the boundary surface for
    /// tets, the shell itself for tris, the edges for rods.
    pub fn output_topology(&self) -> (Vec<[usize; 3]>, Vec<[usize; 2]>) {
        let mesh = &self.mesh;
        match mesh.kind() {
            ElementKind::Tet => {
                let tets: Vec<Vec<usize>> = mesh.elements().map(|e| e.to_vec()).collect();
                (boundary_triangles(mesh.rest_positions(), &tets), Vec::new())
            }
            ElementKind::Tri => (mesh.elements().map(|e| [e[0], e[1], e[2]]).collect(), Vec::new()),
            ElementKind::Rod => (Vec::new(), mesh.elements().map(|e| [e[0], e[1]]).collect()),
        }
    }
}

pub(crate) fn select_in_box<T: Real>(x: &[Vector3<T>], lo: Vector3<T>, hi: Vector3<T>) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, p)| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]))
        .map(|(i, _)| i)
        .collect()
}

/// Builds a raw simulation mesh of `kind` from a tet mesh's vertices and
/// elements: the tets themselves, their boundary triangles, or their edges.
/// Vertices no element references (the interior of a shell) are dropped and
/// the rest renumbered in their original order.
pub fn tet_representation(
    kind: ElementKind,
    x: &[Vector3<f64>],
    tets: &[Vec<usize>],
) -> (Vec<Vector3<f64>>, Vec<Vec<usize>>) {
    let elements = match kind {
        ElementKind::Tet => tets.to_vec(),
        ElementKind::Tri => boundary_triangles(x, tets).into_iter().map(|f| f.to_vec()).collect(),
        ElementKind::Rod => unique_edges(tets).into_iter().map(|e| e.to_vec()).collect(),
    };
    drop_unused_vertices(x, elements)
}

/// Removes vertices referenced by no element and renumbers the elements.
pub fn drop_unused_vertices(x: &[Vector3<f64>], mut elements: Vec<Vec<usize>>) -> (Vec<Vector3<f64>>, Vec<Vec<usize>>) {
    let mut used = vec![false; x.len()];
    for &v in elements.iter().flatten() {
        used[v] = true;
    }
    let mut remap = vec![usize::MAX; x.len()];
    let mut kept = Vec::with_capacity(x.len());
    for (v, p) in x.iter().enumerate() {
        if used[v] {
            remap[v] = kept.len();
            kept.push(*p);
        }
    }
    for v in elements.iter_mut().flatten() {
        *v = remap[*v];
    }
    (kept, elements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::MaterialModel;
    use crate::mesh::{box_tet_mesh, MeshOptions};

    #[test]
    fn unused_vertices_are_dropped() {
        let x: Vec<Vector3<f64>> = (0..4).map(|i| Vector3::repeat(i as f64)).collect();
        let (kept, elements) = drop_unused_vertices(&x, vec![vec![3, 1]]);
        assert_eq!(kept, vec![x[1], x[3]]);
        assert_eq!(elements, vec![vec![1, 0]]);
    }

    #[test]
    fn projection_round_trip() {
        let p = build_projection(&[], 2).unwrap();
        assert_eq!(p.num_free(), 6);
        let q = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(p.unproject(&p.project(&q), &q), q.to_vec());

        let p = build_projection(&[0], 2).unwrap();
        assert_eq!(p.num_free(), 3);
        let free = p.project(&q);
        assert_eq!(free, vec![4.0, 5.0, 6.0]);
        assert_eq!(p.unproject(&[7.0, 8.0, 9.0], &q), vec![1.0, 2.0, 3.0, 7.0, 8.0, 9.0]);
        assert!(matches!(build_projection(&[2], 2), Err(SceneError::PinIndex { vertex: 2, .. })));
    }

    #[test]
    fn contact_law() {
        let g = Ground::new(0.0f64, 1e4, 10.0);
        let f = contact_force(&[0.0, 0.5, 0.0, 1.0, -0.01, 2.0], None, &g);
        assert_eq!(&f[..3], &[0.0, 0.0, 0.0]);
        assert!((f[4] - 100.0).abs() < 1e-9 && f[3] == 0.0 && f[5] == 0.0);
    }

    #[test]
    fn contact_terms_match_force() {
        let g = Ground::new(0.0f64, 1e4, 10.0);
        let h = 0.01;
        let q0 = [0.0, -0.01, 0.0];
        let q = [0.0, -0.02, 0.0];
        let t = contact_terms(&q, &q0, &g, h);
        let v = [0.0, (q[1] - q0[1]) / h, 0.0];
        let f = contact_force(&q, Some(&v), &g);
        assert!((t.gradient[1] + f[1]).abs() < 1e-9);
        let eps = 1e-7;
        let e = |y: f64| contact_energy(&[0.0, y, 0.0], &q0, &g, h);
        let fd = (e(q[1] + eps) - e(q[1] - eps)) / (2.0 * eps);
        assert!((fd - t.gradient[1]).abs() < 1e-4 * t.gradient[1].abs());
    }

    #[test]
    fn unit_tet_mass_lumping() {
        let s = 6f64.cbrt();
        let x = vec![Vector3::zeros(), Vector3::x() * s, Vector3::y() * s, Vector3::z() * s];
        let mesh = SimMesh::new(ElementKind::Tet, x, vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
        let m = lumped_mass(&mesh, 1000.0).unwrap();
        assert!(m.iter().all(|&mi| (mi - 250.0).abs() < 1e-9));
        assert!(lumped_mass(&mesh, 0.0).is_err());
    }

    #[test]
    fn velocity_and_keyframe_pins() {
        let x0 = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let pin = PinGroup::moving(vec![0], Vector3::new(0.5, 0.0, 0.0));
        assert_eq!(pin.positions_at(&x0, 2.0)[0], Vector3::new(2.0, 0.0, 0.0));
        let keys = PinGroup {
            vertices: vec![0, 1],
            motion: PinMotion::Keyframes(vec![
                Keyframe {
                    time: 0.0,
                    translation: Vector3::zeros(),
                    rotation: Vector3::zeros(),
                },
                Keyframe {
                    time: 1.0,
                    translation: Vector3::new(0.0, 2.0, 0.0),
                    rotation: Vector3::new(0.0, 0.0, std::f64::consts::PI),
                },
            ]),
        };
        let p = keys.positions_at(&x0, 0.5);
        assert!((p[0] - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
        let p = keys.positions_at(&x0, 5.0);
        assert!((p[0] - Vector3::new(-1.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn box_selection() {
        let (x, t) = box_tet_mesh::<f64>([2, 1, 1], Vector3::new(2.0, 1.0, 1.0), Vector3::zeros());
        let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
        let mat = MaterialParams::new(MaterialModel::Arap, 1.0, 1.0, 0.0).unwrap();
        let scene = Scene::new(mesh, mat);
        let sel = scene.select_vertices(Vector3::repeat(-0.1), Vector3::new(0.1, 2.0, 2.0));
        assert_eq!(sel.len(), 4);
    }
}
