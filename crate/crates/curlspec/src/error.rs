use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),

    #[error("mesh contains no tetrahedra")]
    NoTetrahedra,

    #[error("mesh validation failed: {0}")]
    MeshValidation(String),

    #[error("degenerate tetrahedron {tet}: volume {volume:e} below threshold")]
    DegenerateTet { tet: usize, volume: f64 },

    #[error("no free degrees of freedom (mesh too coarse for {0})")]
    NoFreeDofs(String),

    #[error("operator requires a convex domain: {0}")]
    NonConvexDomain(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("shift {sigma} is singular for the pencil; retry with a perturbed shift, e.g. {hint}")]
    SingularShift { sigma: f64, hint: f64 },

    #[error("eigensolver did not converge: {converged} of {requested} pairs at tolerance {tol:e}")]
    NonConvergence {
        converged: usize,
        requested: usize,
        tol: f64,
    },

    #[error("insufficient spectrum: need {needed} values, have {available}")]
    InsufficientSpectrum { needed: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
