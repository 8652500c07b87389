use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("element {element}: degenerate element (measure {measure:e} <= threshold {threshold:e})")]
    Degenerate {
        element: usize,
        measure: f64,
        threshold: f64,
    },
    #[error("element {element} references vertex {vertex} but the mesh has {count} vertices")]
    BadIndex {
        element: usize,
        vertex: usize,
        count: usize,
    },
    #[error("element {element} has {found} vertices, expected {expected}")]
    Arity {
        element: usize,
        found: usize,
        expected: usize,
    },
    #[error("mesh has no elements")]
    Empty,
    #[error("operation requires a {expected} mesh, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("neo-Hookean energy undefined for det(S) = {det:e} <= 0")]
    Inverted { det: f64 },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("preconditioner factorization failed: {0}")]
    Factorization(String),
    #[error("non-finite value in conjugate gradient iterate at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scene {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("invalid scene field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("pin references vertex {vertex} but the mesh has {count} vertices")]
    PinIndex { vertex: usize, count: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Failure of a simulation step. The simulation state is left untouched.
#[derive(Debug, Error)]
pub enum StepError {
    #[error("element {element}: {source}")]
    Material {
        element: usize,
        #[source]
        source: MaterialError,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("non-finite state after step")]
    NonFinite,
}
