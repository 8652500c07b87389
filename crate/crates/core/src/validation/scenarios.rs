//! Programmatic versions of the bundled experiment scenes.

use crate::materials::{MaterialModel, MaterialParams};
use crate::mesh::{ball_tet_mesh, box_tet_mesh, ElementKind, MeshOptions, SimMesh};
use crate::scene::{tet_representation, Ground, PinGroup, Scene};
use crate::solver::{Simulation, StepConfig};
use nalgebra::Vector3;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, -9.81, 0.0);

fn tet_mesh(x: Vec<Vector3<f64>>, t: Vec<Vec<usize>>) -> SimMesh<f64> {
    SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).expect("generated mesh is valid")
}

fn material(model: MaterialModel, density: f64, youngs: f64, poisson: f64) -> MaterialParams<f64> {
    MaterialParams::new(model, density, youngs, poisson).expect("valid material")
}

/// Interactive settings with `m` inner iterations.
pub fn interactive(h: f64, substeps: usize) -> StepConfig<f64> {
    StepConfig {
        h,
        inner_iterations: substeps,
        ..StepConfig::default()
    }
}

/// A unit cube of `cells³` cells with no forces.
pub fn rest_cube(model: MaterialModel, cells: usize) -> Scene<f64> {
    let (x, t) = box_tet_mesh([cells; 3], Vector3::repeat(1.0), Vector3::zeros());
    Scene::new(tet_mesh(x, t), material(model, 1000.0, 1e5, 0.45))
}

/// Blob of `(n³·6)` tets dropped from 5 cm onto the ground (Corot, ν = 0.45,
/// ρ = 1000, the given Young's modulus), 15 substeps.
pub fn drop(youngs: f64, n: usize) -> (Scene<f64>, StepConfig<f64>) {
    let radii = Vector3::new(0.3, 0.2, 0.2);
    let (x, t) = ball_tet_mesh(n, radii, Vector3::new(0.0, radii.y + 0.05, 0.0));
    let scene = Scene::new(tet_mesh(x, t), material(MaterialModel::Corot, 1000.0, youngs, 0.45))
        .with_gravity(GRAVITY)
        .with_ground(Ground::new(0.0, 1e5, 10.0));
    (scene, interactive(0.01, 15))
}

/// Square slab `[0,1]² × [0, 0.05]` whose left and right faces are pulled
/// apart symmetrically at `speed` m/s each.
pub fn stretch(model: MaterialModel, cells: usize, speed: f64) -> (Scene<f64>, StepConfig<f64>) {
    let (x, t) = box_tet_mesh([cells, cells, 1], Vector3::new(1.0, 1.0, 0.05), Vector3::zeros());
    let scene = Scene::new(tet_mesh(x, t), material(model, 1000.0, 1e5, 0.45));
    let left = scene.select_vertices(Vector3::new(-1.0, -1.0, -1.0), Vector3::new(1e-9, 2.0, 2.0));
    let right = scene.select_vertices(Vector3::new(1.0 - 1e-9, -1.0, -1.0), Vector3::new(2.0, 2.0, 2.0));
    let scene = scene.with_pins(vec![
        PinGroup::moving(left, Vector3::new(-speed, 0.0, 0.0)),
        PinGroup::moving(right, Vector3::new(speed, 0.0, 0.0)),
    ]);
    (scene, interactive(0.01, 10))
}

/// One shape as volume, shell and rods: a blob of `n³·6` tets, its boundary
/// triangles, or its edges, dropped onto the ground with neo-Hookean material
/// (volume ρ = 1000, E = 1e5, ν = 0.45; shell ρ = 100, E = 1e5, ν = 0.4;
/// rods ρ = 100, E = 2e5, ν = 0.45).
pub fn three_ways(kind: ElementKind, n: usize) -> (Scene<f64>, StepConfig<f64>) {
    let radii = Vector3::new(0.25, 0.2, 0.15);
    let (x, tets) = ball_tet_mesh(n, radii, Vector3::new(0.0, radii.y + 0.1, 0.0));
    let (x, elements) = tet_representation(kind, &x, &tets);
    let params = match kind {
        ElementKind::Tet => material(MaterialModel::NeoHookean, 1000.0, 1e5, 0.45),
        ElementKind::Tri => material(MaterialModel::NeoHookean, 100.0, 1e5, 0.40),
        ElementKind::Rod => material(MaterialModel::NeoHookean, 100.0, 2e5, 0.45),
    };
    let options = MeshOptions {
        thickness: 0.01,
        cross_section: 1e-4,
    };
    let mesh = SimMesh::new(kind, x, elements, options).expect("generated mesh is valid");
    let scene = Scene::new(mesh, params)
        .with_gravity(GRAVITY)
        .with_ground(Ground::new(0.0, 1e5, 10.0));
    (scene, interactive(0.01, 5))
}

/// Cantilever `[0, length] × [0, 0.1]²` clamped at `x = 0`, hanging under
/// gravity (neo-Hookean, ρ = 1000, ν = 0.3).
pub fn cantilever(cells: [usize; 3], length: f64, youngs: f64) -> Scene<f64> {
    let (x, t) = box_tet_mesh(cells, Vector3::new(length, 0.1, 0.1), Vector3::zeros());
    let scene = Scene::new(tet_mesh(x, t), material(MaterialModel::NeoHookean, 1000.0, youngs, 0.3)).with_gravity(GRAVITY);
    let clamped = scene.select_vertices(Vector3::new(-1.0, -1.0, -1.0), Vector3::new(1e-9, 1.0, 1.0));
    scene.with_pins(vec![PinGroup::fixed(clamped)])
}

/// Steps until the largest per-step displacement drops to `tol` (or `max_steps`).
/// Returns the number of steps taken and the final displacement.
pub fn settle(sim: &mut Simulation<f64>, tol: f64, max_steps: usize) -> Result<(usize, f64), String> {
    let mut last = f64::INFINITY;
    for k in 0..max_steps {
        sim.step().map_err(|e| format!("step {k}: {e}"))?;
        let st = sim.state();
        last = st.q.iter().zip(&st.q_prev).fold(0.0, |a, (x, y)| a.max((x - y).abs()));
        if last <= tol {
            return Ok((k + 1, last));
        }
    }
    Ok((max_steps, last))
}
