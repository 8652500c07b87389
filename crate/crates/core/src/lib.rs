//! Mixed finite-element elastodynamics for tetrahedral volumes, triangle
//! shells and rods.
//!
//! Each backward-Euler step is solved by a Newton-like outer loop whose search
//! directions come from alternating projections: a per-element rotation fit
//! (local step) followed by a global saddle-point solve for positions and
//! multipliers, from which the symmetric stretches are recovered blockwise.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common case.

pub mod error;
pub mod kinematics;
pub mod linsolve;
pub mod materials;
pub mod mesh;
pub mod real;
pub mod rotation;
pub mod scene;
pub mod solver;
pub mod sparse;
pub mod validation;

pub use error::{MaterialError, MeshError, SceneError, SolveError, StepError};
pub use materials::{MaterialModel, MaterialParams};
pub use mesh::{ElementKind, MeshOptions, SimMesh};
pub use real::Real;
pub use scene::{Ground, PinGroup, Scene, SceneConfig};
pub use solver::{Simulation, SolverState, StepConfig, StepStats, SubstepStats};

pub type Mesh = SimMesh<f64>;
pub type Mesh32 = SimMesh<f32>;
pub type Simulation64 = Simulation<f64>;
pub type Simulation32 = Simulation<f32>;
