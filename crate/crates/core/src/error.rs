//! Shared error type for the calculus toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched dimensions between interacting objects (points, grids, matrices).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A symbolically detected divergent integral or lattice sum.
    #[error("divergent {what}: {detail}")]
    Divergent { what: &'static str, detail: String },

    /// Adaptive quadrature failed to settle across refinement levels.
    #[error("quadrature did not converge: {0}")]
    QuadratureNonConvergence(String),

    /// Spectral content too close to the grid's Nyquist edge.
    #[error("aliasing detected: {0}")]
    Aliasing(String),

    /// A dense solve met an effectively singular system.
    #[error("ill-conditioned system (cond ≈ {cond:.3e}): {hint}")]
    IllConditioned { cond: f64, hint: String },

    /// A requested translation leaves the sampled box.
    #[error("shift {shift:.3} exceeds grid margin {margin:.3}")]
    ShiftOutOfRange { shift: f64, margin: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
