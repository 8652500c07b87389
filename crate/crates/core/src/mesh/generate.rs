//! Procedural meshes used by the bundled scenes and the test suite.

use crate::real::Real;
use nalgebra::Vector3;
use std::collections::{BTreeSet, HashMap};

/// Regular grid of `nx × ny × nz` cells over the box `[origin, origin + size]`,
/// each cell split into six tets sharing the cell's main diagonal (conforming
/// across cells).
pub fn box_tet_mesh<T: Real>(
    cells: [usize; 3],
    size: Vector3<T>,
    origin: Vector3<T>,
) -> (Vec<Vector3<T>>, Vec<Vec<usize>>) {
    let [nx, ny, nz] = cells;
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut x = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let f = Vector3::new(
                    T::from_usize_lossy(i) / T::from_usize_lossy(nx),
                    T::from_usize_lossy(j) / T::from_usize_lossy(ny),
                    T::from_usize_lossy(k) / T::from_usize_lossy(nz),
                );
                x.push(origin + size.component_mul(&f));
            }
        }
    }
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for path in PATHS {
                    let mut c = [i, j, k];
                    let mut tet = vec![id(c[0], c[1], c[2])];
                    for axis in path {
                        c[axis] += 1;
                        tet.push(id(c[0], c[1], c[2]));
                    }
                    tets.push(tet);
                }
            }
        }
    }
    (x, tets)
}

/// A rounded blob: the `n³`-cell box mesh of `[-1, 1]³` pushed onto the unit
/// ball by the area-preserving cube-to-sphere map, then scaled by `radii`
/// and moved to `center`. Stands in for organic shapes in bundled scenes.
pub fn ball_tet_mesh<T: Real>(n: usize, radii: Vector3<T>, center: Vector3<T>) -> (Vec<Vector3<T>>, Vec<Vec<usize>>) {
    let two = T::lit(2.0);
    let (x, tets) = box_tet_mesh([n, n, n], Vector3::repeat(two), Vector3::repeat(-T::one()));
    let third = T::lit(1.0 / 3.0);
    let half = T::lit(0.5);
    let x = x
        .into_iter()
        .map(|p| {
            let (x2, y2, z2) = (p.x * p.x, p.y * p.y, p.z * p.z);
            let m = Vector3::new(
                p.x * (T::one() - half * y2 - half * z2 + y2 * z2 * third).sqrt(),
                p.y * (T::one() - half * z2 - half * x2 + z2 * x2 * third).sqrt(),
                p.z * (T::one() - half * x2 - half * y2 + x2 * y2 * third).sqrt(),
            );
            center + m.component_mul(&radii)
        })
        .collect();
    (x, tets)
}

/// Faces used by exactly one tet, wound so the normal points out of that tet.
pub fn boundary_triangles<T: Real>(x: &[Vector3<T>], tets: &[Vec<usize>]) -> Vec<[usize; 3]> {
    let mut count: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
    for tet in tets {
        let [a, b, c, d] = [tet[0], tet[1], tet[2], tet[3]];
        for (face, opposite) in [([b, c, d], a), ([a, d, c], b), ([a, b, d], c), ([a, c, b], d)] {
            let mut oriented = face;
            let n = (x[face[1]] - x[face[0]]).cross(&(x[face[2]] - x[face[0]]));
            if n.dot(&(x[opposite] - x[face[0]])) > T::zero() {
                oriented.swap(1, 2);
            }
            let mut key = face;
            key.sort_unstable();
            count.entry(key).and_modify(|e| e.0 += 1).or_insert((1, oriented));
        }
    }
    let mut faces: Vec<_> = count
        .into_values()
        .filter(|(n, _)| *n == 1)
        .map(|(_, f)| f)
        .collect();
    faces.sort_unstable();
    faces
}

/// Sorted list of distinct element edges.
pub fn unique_edges(elements: &[Vec<usize>]) -> Vec<[usize; 2]> {
    let mut edges = BTreeSet::new();
    for el in elements {
        for a in 0..el.len() {
            for b in a + 1..el.len() {
                let (u, v) = (el[a].min(el[b]), el[a].max(el[b]));
                edges.insert([u, v]);
            }
        }
    }
    edges.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ElementKind, MeshOptions, SimMesh};

    #[test]
    fn box_mesh_volume_and_boundary() {
        let (x, t) = box_tet_mesh::<f64>([2, 3, 1], Vector3::new(2.0, 3.0, 0.5), Vector3::zeros());
        assert_eq!(t.len(), 36);
        let mesh = SimMesh::new(ElementKind::Tet, x.clone(), t.clone(), MeshOptions::default()).unwrap();
        assert!((mesh.total_volume() - 3.0).abs() < 1e-12);
        let faces = boundary_triangles(&x, &t);
        // 2·(2·3 + 2·1 + 3·1) quads, two triangles each.
        assert_eq!(faces.len(), 44);
        // Closed surface: divergence theorem gives the enclosed volume.
        let vol: f64 = faces
            .iter()
            .map(|f| x[f[0]].dot(&x[f[1]].cross(&x[f[2]])) / 6.0)
            .sum();
        assert!((vol - 3.0).abs() < 1e-12);
    }

    #[test]
    fn edges_are_unique() {
        let e = unique_edges(&[vec![0, 1, 2], vec![2, 1, 3]]);
        assert_eq!(e, vec![[0, 1], [0, 2], [1, 2], [1, 3], [2, 3]]);
    }

    #[test]
    fn ball_mesh_is_valid_and_round() {
        let (x, t) = ball_tet_mesh::<f64>(4, Vector3::new(1.0, 1.0, 1.0), Vector3::zeros());
        let mesh = SimMesh::new(ElementKind::Tet, x.clone(), t, MeshOptions::default()).unwrap();
        let v = mesh.total_volume();
        let sphere = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(v < sphere && v > 0.85 * sphere, "volume {v}");
        assert!(x.iter().all(|p| p.norm() <= 1.0 + 1e-12));
    }
}
