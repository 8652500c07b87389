//! The scene file: TOML with the tables below. Material keys use the same
//! names as the usual statistics tables (`Model`, `ρ`, `E`, `ν`, and
//! `Substeps` for the inner iteration count); `rho` and `nu` are accepted as
//! ASCII spellings.
//!
//! ```toml
//! gravity = [0.0, -9.81, 0.0]        # m/s², default shown
//! initial_velocity = [0.0, 0.0, 0.0] # m/s
//! perturbation = 0.0                 # random initial jitter (m), seeded
//! frames = 100                       # default frame count for `run`
//!
//! [mesh]
//! kind = "tet"                       # simulated representation: tet | tri | rod
//! path = "meshes/blob.node"          # relative to the scene file
//! source = "tet"                     # file format, defaults to `kind`
//! generator = { type = "box", cells = [8, 2, 2], size = [1.0, 0.25, 0.25] }
//! thickness = 1e-3                   # shells, m
//! cross_section = 1e-6               # rods, m²
//! scale = 1.0
//! translate = [0.0, 0.0, 0.0]
//!
//! [material]
//! Model = "NH"                       # ARAP | Corot | NH
//! "ρ" = 1000.0                       # kg/m³
//! E = 1e5                            # Pa
//! "ν" = 0.45
//!
//! [solver]
//! h = 0.01
//! Substeps = 5                       # inner iterations per outer iteration
//! outer = 1
//! interactive = true                 # fixed iteration counts, no early exit
//! cg_tol = 1e-7
//! tikhonov = 1e-6
//!
//! [[pins]]
//! vertices = [0, 1, 2]                # indices into the simulated mesh (after any
//!                                     # tet → tri/rod conversion drops unused vertices)
//! select = { min = [-0.01, -1, -1], max = [0.01, 1, 1] }
//! velocity = [0.1, 0.0, 0.0]         # or keyframes = [{ t = 0.0, translation = [...], rotation = [...] }]
//!
//! [ground]
//! height = 0.0
//! stiffness = 1e5                    # N/m
//! damping = 10.0                     # N·s/m
//! ```
//!
//! A mesh comes either from `path` or from `generator` (`box` or `ball`).
//! A tet source can be simulated as `tri` (its boundary surface) or `rod`
//! (its edges); a tri source can be simulated as `rod`.

use super::{drop_unused_vertices, select_in_box, tet_representation, Ground, Keyframe, PinGroup, PinMotion, Scene};
use crate::error::{MeshError, SceneError};
use crate::linsolve::CgMethod;
use crate::materials::{MaterialModel, MaterialParams};
use crate::mesh::{ball_tet_mesh, box_tet_mesh, read_mesh_file, unique_edges, ElementKind, MeshOptions, SimMesh};
use crate::real::Real;
use crate::solver::StepConfig;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub mesh: MeshConfig,
    pub material: MaterialConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub initial_velocity: [f64; 3],
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default)]
    pub pins: Vec<PinConfig>,
    #[serde(default)]
    pub ground: Option<GroundConfig>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, -9.81, 0.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub kind: ElementKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub source: Option<ElementKind>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
    #[serde(default = "default_cross_section")]
    pub cross_section: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub translate: [f64; 3],
}

fn default_thickness() -> f64 {
    MeshOptions::default().thickness
}

fn default_cross_section() -> f64 {
    MeshOptions::default().cross_section
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    Box {
        cells: [usize; 3],
        size: [f64; 3],
        #[serde(default)]
        origin: [f64; 3],
    },
    Ball {
        cells: usize,
        radii: [f64; 3],
        #[serde(default)]
        center: [f64; 3],
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(rename = "Model")]
    pub model: MaterialModel,
    #[serde(rename = "ρ", alias = "rho")]
    pub density: f64,
    #[serde(rename = "E")]
    pub youngs: f64,
    #[serde(rename = "ν", alias = "nu")]
    pub poisson: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub h: f64,
    #[serde(rename = "Substeps")]
    pub substeps: usize,
    pub outer: usize,
    pub interactive: bool,
    pub cg_tol: f64,
    pub cg_method: CgMethod,
    pub cg_max_iterations: Option<usize>,
    pub tikhonov: f64,
    pub rotation_compliance: f64,
    pub alpha0: f64,
    pub alpha_growth: f64,
    pub max_backtracks: usize,
    pub position_tol: f64,
    pub constraint_tol: f64,
    pub rotation_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let c = StepConfig::<f64>::default();
        Self {
            h: c.h,
            substeps: c.inner_iterations,
            outer: c.outer_iterations,
            interactive: c.fixed_iterations,
            cg_tol: c.cg_tol,
            cg_method: c.cg_method,
            cg_max_iterations: c.cg_max_iterations,
            tikhonov: c.tikhonov,
            rotation_compliance: c.rotation_compliance,
            alpha0: c.alpha0,
            alpha_growth: c.alpha_growth,
            max_backtracks: c.max_backtracks,
            position_tol: c.position_tol,
            constraint_tol: c.constraint_tol,
            rotation_tol: c.rotation_tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinConfig {
    #[serde(default)]
    pub vertices: Vec<usize>,
    #[serde(default)]
    pub select: Option<SelectBox>,
    #[serde(default)]
    pub velocity: Option<[f64; 3]>,
    #[serde(default)]
    pub keyframes: Vec<KeyframeConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeConfig {
    pub t: f64,
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub rotation: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundConfig {
    pub height: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            height: 0.0,
            stiffness: 1e5,
            damping: 10.0,
        }
    }
}

fn field(field: &str, message: impl Into<String>) -> SceneError {
    SceneError::Field {
        field: field.into(),
        message: message.into(),
    }
}

fn vec3<T: Real>(a: [f64; 3]) -> Vector3<T> {
    Vector3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
}

impl SceneConfig {
    pub fn from_path(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Parses scene text; `path` is used in diagnostics only.
    pub fn parse(text: &str, path: &Path) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Schema {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn material_params<T: Real>(&self) -> Result<MaterialParams<T>, SceneError> {
        let m = &self.material;
        Ok(MaterialParams::new(m.model, T::lit(m.density), T::lit(m.youngs), T::lit(m.poisson))?)
    }

    pub fn step_config<T: Real>(&self) -> Result<StepConfig<T>, SceneError> {
        let s = &self.solver;
        let config = StepConfig {
            h: T::lit(s.h),
            outer_iterations: s.outer,
            inner_iterations: s.substeps,
            fixed_iterations: s.interactive,
            cg_tol: T::lit(s.cg_tol),
            cg_method: s.cg_method,
            cg_max_iterations: s.cg_max_iterations,
            tikhonov: T::lit(s.tikhonov),
            rotation_compliance: T::lit(s.rotation_compliance),
            alpha0: T::lit(s.alpha0),
            alpha_growth: T::lit(s.alpha_growth),
            max_backtracks: s.max_backtracks,
            position_tol: T::lit(s.position_tol),
            constraint_tol: T::lit(s.constraint_tol),
            rotation_tol: T::lit(s.rotation_tol),
            ..StepConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn raw_mesh(&self, base_dir: &Path) -> Result<(Vec<Vector3<f64>>, Vec<Vec<usize>>), SceneError> {
        let m = &self.mesh;
        let (x, elements, source) = match (&m.path, &m.generator) {
            (Some(_), Some(_)) => return Err(field("mesh", "give either `path` or `generator`, not both")),
            (None, None) => return Err(field("mesh", "one of `path` or `generator` is required")),
            (Some(p), None) => {
                let source = m.source.unwrap_or(m.kind);
                let (x, e) = read_mesh_file(&base_dir.join(p), source)?;
                (x, e, source)
            }
            (None, Some(GeneratorConfig::Box { cells, size, origin })) => {
                if cells.iter().any(|&c| c == 0) {
                    return Err(field("mesh.generator.cells", "cell counts must be positive"));
                }
                let (x, t) = box_tet_mesh(*cells, vec3(*size), vec3(*origin));
                (x, t, ElementKind::Tet)
            }
            (None, Some(GeneratorConfig::Ball { cells, radii, center })) => {
                if *cells == 0 {
                    return Err(field("mesh.generator.cells", "cell count must be positive"));
                }
                let (x, t) = ball_tet_mesh(*cells, vec3(*radii), vec3(*center));
                (x, t, ElementKind::Tet)
            }
        };
        let (x, elements) = match (source, m.kind) {
            (a, b) if a == b => (x, elements),
            (ElementKind::Tet, kind) => tet_representation(kind, &x, &elements),
            (ElementKind::Tri, ElementKind::Rod) => {
                drop_unused_vertices(&x, unique_edges(&elements).into_iter().map(|e| e.to_vec()).collect())
            }
            (a, b) => {
                return Err(field(
                    "mesh.kind",
                    format!("cannot simulate a {} source as {}", a.name(), b.name()),
                ))
            }
        };
        let t = Vector3::from(m.translate);
        let x = x.into_iter().map(|p| p * m.scale + t).collect();
        Ok((x, elements))
    }

    /// Builds the scene. Relative mesh paths resolve against `base_dir`;
    /// `seed` drives the optional initial perturbation.
    pub fn build<T: Real>(&self, base_dir: &Path, seed: u64) -> Result<(Scene<T>, StepConfig<T>), SceneError> {
        let config = self.step_config()?;
        let material = self.material_params()?;
        if !(self.mesh.thickness > 0.0) {
            return Err(field("mesh.thickness", "must be positive"));
        }
        if !(self.mesh.cross_section > 0.0) {
            return Err(field("mesh.cross_section", "must be positive"));
        }
        if !(self.mesh.scale > 0.0) {
            return Err(field("mesh.scale", "must be positive"));
        }
        let (x, elements) = self.raw_mesh(base_dir)?;
        let options = MeshOptions {
            thickness: self.mesh.thickness,
            cross_section: self.mesh.cross_section,
        };
        let x: Vec<Vector3<T>> = x.iter().map(|p| vec3([p.x, p.y, p.z])).collect();
        let mesh = SimMesh::new(self.mesh.kind, x, elements, options).map_err(|e| match e {
            MeshError::Empty => field("mesh", "mesh has no elements"),
            e => SceneError::Mesh(e),
        })?;

        let mut pins = Vec::new();
        for (i, p) in self.pins.iter().enumerate() {
            let mut vertices = p.vertices.clone();
            if let Some(b) = &p.select {
                vertices.extend(select_in_box(mesh.rest_positions(), vec3(b.min), vec3(b.max)));
            }
            vertices.sort_unstable();
            vertices.dedup();
            if let Some(&v) = vertices.iter().find(|&&v| v >= mesh.num_vertices()) {
                return Err(SceneError::PinIndex {
                    vertex: v,
                    count: mesh.num_vertices(),
                });
            }
            if vertices.is_empty() {
                return Err(field(&format!("pins[{i}]"), "selects no vertices"));
            }
            let motion = match (&p.velocity, p.keyframes.is_empty()) {
                (Some(_), false) => {
                    return Err(field(&format!("pins[{i}]"), "give either `velocity` or `keyframes`, not both"))
                }
                (Some(v), true) => PinMotion::Velocity(vec3(*v)),
                (None, false) => {
                    if p.keyframes.windows(2).any(|w| w[1].t < w[0].t) {
                        return Err(field(&format!("pins[{i}].keyframes"), "times must be non-decreasing"));
                    }
                    PinMotion::Keyframes(
                        p.keyframes
                            .iter()
                            .map(|k| Keyframe {
                                time: T::lit(k.t),
                                translation: vec3(k.translation),
                                rotation: vec3(k.rotation),
                            })
                            .collect(),
                    )
                }
                (None, true) => PinMotion::Static,
            };
            pins.push(PinGroup { vertices, motion });
        }

        let ground = match &self.ground {
            Some(g) => {
                if !(g.stiffness >= 0.0) {
                    return Err(field("ground.stiffness", "must be non-negative"));
                }
                if !(g.damping >= 0.0) {
                    return Err(field("ground.damping", "must be non-negative"));
                }
                Some(Ground::new(T::lit(g.height), T::lit(g.stiffness), T::lit(g.damping)))
            }
            None => None,
        };

        if !(self.perturbation >= 0.0) {
            return Err(field("perturbation", "must be non-negative"));
        }
        let mut scene = Scene::new(mesh, material)
            .with_gravity(vec3(self.gravity))
            .with_velocity(vec3(self.initial_velocity))
            .with_pins(pins);
        scene.ground = ground;
        if self.perturbation > 0.0 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let amp = self.perturbation;
            let pinned = scene.pinned_vertices();
            for (i, p) in scene.initial_positions.iter_mut().enumerate() {
                if pinned.binary_search(&i).is_err() {
                    *p += Vector3::from_fn(|_, _| T::lit(rng.gen_range(-amp..amp)));
                }
            }
        }
        Ok((scene, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[mesh]
kind = "tet"
generator = { type = "box", cells = [2, 1, 1], size = [2.0, 1.0, 1.0] }

[material]
Model = "Corot"
"ρ" = 1000.0
E = 1e6
"ν" = 0.45

[solver]
Substeps = 15

[[pins]]
select = { min = [-0.1, -0.1, -0.1], max = [0.1, 2.0, 2.0] }

[ground]
height = -1.0
"#;

    #[test]
    fn parses_table_keys() {
        let c = SceneConfig::parse(BASIC, Path::new("basic.toml")).unwrap();
        assert_eq!(c.material.model, MaterialModel::Corot);
        assert_eq!(c.solver.substeps, 15);
        let (scene, step) = c.build::<f64>(Path::new("."), 0).unwrap();
        assert_eq!(step.inner_iterations, 15);
        assert_eq!(scene.pinned_vertices().len(), 4);
        assert_eq!(scene.ground.unwrap().stiffness, 1e5);
        assert_eq!(scene.gravity, Vector3::new(0.0, -9.81, 0.0));
    }

    #[test]
    fn ascii_aliases() {
        let text = BASIC.replace("\"ρ\"", "rho").replace("\"ν\"", "nu");
        let c = SceneConfig::parse(&text, Path::new("a.toml")).unwrap();
        assert_eq!(c.material.density, 1000.0);
        assert_eq!(c.material.poisson, 0.45);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = BASIC.replace("Model = \"Corot\"", "Modle = \"Corot\"");
        let err = SceneConfig::parse(&text, Path::new("a.toml")).unwrap_err().to_string();
        assert!(err.contains("Modle"), "{err}");
        let text = BASIC.replace("E = 1e6", "E = -1.0");
        let c = SceneConfig::parse(&text, Path::new("a.toml")).unwrap();
        assert!(c.build::<f64>(Path::new("."), 0).is_err());
        let text = BASIC.replace("Substeps = 15", "Substeps = 0");
        let err = SceneConfig::parse(&text, Path::new("a.toml")).unwrap().build::<f64>(Path::new("."), 0).unwrap_err();
        assert!(err.to_string().contains("Substeps"), "{err}");
    }

    #[test]
    fn representation_conversion() {
        for (kind, n) in [("tri", 20), ("rod", 33)] {
            let text = BASIC.replace("kind = \"tet\"", &format!("kind = \"{kind}\""));
            let c = SceneConfig::parse(&text, Path::new("a.toml")).unwrap();
            let (scene, _) = c.build::<f64>(Path::new("."), 0).unwrap();
            assert_eq!(scene.mesh.num_elements(), n, "{kind}");
        }
    }
}
