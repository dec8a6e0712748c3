use thiserror::Error;

/// Errors shared by all modules.
#[derive(Debug, Error)]
pub enum MgError {
    /// A point failed the on-surface check for its manifold.
    #[error("point {index} is not on the {manifold}: {detail}")]
    OffSurface {
        manifold: &'static str,
        index: usize,
        detail: String,
    },

    /// Two points of a set coincide (separation radius would be zero).
    #[error("points {i} and {j} coincide")]
    CoincidentPoints { i: usize, j: usize },

    /// Mixed manifolds in one operation.
    #[error("manifold mismatch: {0}")]
    ManifoldMismatch(String),

    /// A size request exceeds the configured capacity guard.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dense linear algebra failed (non-SPD matrix, pivot breakdown, ...).
    #[error("conditioning error: {0}")]
    Conditioning(String),

    /// Mismatched dimensions between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Fine level does not contain the coarse level as a prefix.
    #[error("nesting violation: {0}")]
    Nesting(String),

    /// Explicit dense computation refused above the size guard.
    #[error("size guard: {0}")]
    SizeGuard(String),

    /// Too few usable samples for a fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Iteration failed to converge within its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (cache, matrix, config).
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, MgError>;
