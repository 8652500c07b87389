use mixedfem::mesh::box_tet_mesh;
use mixedfem::validation::scenarios;
use mixedfem::{ElementKind, MaterialModel, MaterialParams, MeshOptions, PinGroup, Scene, SimMesh, Simulation, Simulation32, StepConfig};
use nalgebra::Vector3;
use std::sync::Arc;

fn cube32(cells: usize) -> Scene<f32> {
    let (x, t) = box_tet_mesh([cells; 3], Vector3::repeat(1.0f32), Vector3::zeros());
    let mesh = SimMesh::new(ElementKind::Tet, x, t, MeshOptions::default()).unwrap();
    let material = MaterialParams::new(MaterialModel::NeoHookean, 1000.0f32, 1e5, 0.45).unwrap();
    Scene::new(mesh, material).with_gravity(Vector3::new(0.0, -9.81, 0.0))
}

#[test]
fn single_precision_steps_stay_finite() {
    let scene = cube32(2);
    let top = scene.select_vertices(Vector3::new(-1.0, 0.99, -1.0), Vector3::new(2.0, 2.0, 2.0));
    let scene = scene.with_pins(vec![PinGroup::fixed(top)]);
    let mut sim: Simulation32 = Simulation::new(scene, StepConfig::default()).unwrap();
    for _ in 0..20 {
        let stats = sim.step().unwrap();
        assert!(stats.substeps.iter().all(|s| s.is_finite()));
    }
    let st = sim.state();
    assert!(st.q.iter().all(|v| v.is_finite()));
    // The hanging cube sags but does not fall away.
    let min_y = st.q.chunks(3).map(|p| p[1]).fold(f32::INFINITY, f32::min);
    assert!(min_y < 0.0 && min_y > -0.5, "min y {min_y}");
}

#[test]
fn preconditioner_is_factored_once() {
    let (scene, config) = scenarios::drop(1e6, 2);
    let mut sim = Simulation::new(scene, config).unwrap();
    let before = Arc::clone(sim.preconditioner());
    for _ in 0..5 {
        sim.step().unwrap();
    }
    assert!(Arc::ptr_eq(&before, sim.preconditioner()));
}

#[test]
fn tikhonov_alone_keeps_pinned_tet_solvable() {
    // One tet with three pinned vertices and no rotation compliance: the
    // multiplier block has a nullspace that only the Tikhonov shift removes.
    let x = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    ];
    let mesh: SimMesh<f64> = SimMesh::new(ElementKind::Tet, x, vec![vec![0, 1, 2, 3]], MeshOptions::default()).unwrap();
    for model in [MaterialModel::Arap, MaterialModel::Corot, MaterialModel::NeoHookean] {
        let material = MaterialParams::new(model, 1000.0, 1e5, 0.45).unwrap();
        let scene = Scene::new(mesh.clone(), material)
            .with_gravity(Vector3::new(0.0, -9.81, 0.0))
            .with_pins(vec![PinGroup::fixed(vec![0, 1, 2])]);
        let config = StepConfig {
            rotation_compliance: 0.0,
            tikhonov: 1e-6,
            ..StepConfig::default()
        };
        let mut sim = Simulation::new(scene, config).unwrap();
        for k in 0..20 {
            let stats = sim.step().unwrap();
            assert!(stats.cg_converged, "{model:?}: step {k}: CG did not converge");
        }
        let q = &sim.state().q;
        assert!(q.iter().all(|v| v.is_finite()), "{model:?}");
        assert_eq!(&q[..9], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0], "{model:?}: pins moved");
    }
}

#[test]
fn rest_cube_does_not_move() {
    for model in [MaterialModel::Arap, MaterialModel::Corot, MaterialModel::NeoHookean] {
        let mut sim = Simulation::new(scenarios::rest_cube(model, 2), StepConfig::default()).unwrap();
        let q0 = sim.state().q.clone();
        for _ in 0..10 {
            sim.step().unwrap();
        }
        let drift = sim.state().q.iter().zip(&q0).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(drift <= 1e-8, "{model:?}: drift {drift}");
    }
}

#[test]
fn shells_and_rods_step() {
    for kind in [ElementKind::Tri, ElementKind::Rod] {
        let (scene, config) = scenarios::three_ways(kind, 2);
        let mut sim = Simulation::new(scene, config).unwrap();
        for _ in 0..10 {
            sim.step().unwrap();
        }
        assert!(sim.state().q.iter().all(|v| v.is_finite()), "{kind:?}");
    }
}
