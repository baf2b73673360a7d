use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate element {element}: det J = {det_j:e}")]
    DegenerateElement { element: usize, det_j: f64 },

    #[error("inverted element {element}: det F = {det_f:e}")]
    InvertedElement { element: usize, det_f: f64 },

    #[error("singular deformation gradient (det F = {0:e})")]
    SingularDeformation(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Poisson ratio {0} is at or beyond the incompressible limit")]
    Incompressible(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear solver breakdown: {0}")]
    LinearSolver(String),

    #[error("Newton increment failed at load scale {load_scale}: {reason}")]
    IncrementFailure { load_scale: f64, reason: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
