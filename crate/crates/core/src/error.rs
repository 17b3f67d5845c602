use thiserror::Error;

/// Errors surfaced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric within tolerance (max deviation {0})")]
    NotSymmetric(f64),
    #[error("matrix does not have the patterned block structure (residual {0})")]
    StructureViolation(f64),
    #[error("singular or ill-conditioned matrix in {0}")]
    Singular(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("closed loop is not Schur stable (spectral radius {0})")]
    Unstable(f64),
    #[error("pair (A, B) is not controllable")]
    NotControllable,
    #[error("state diverged: |x|_inf = {0}")]
    Divergence(f64),
    #[error("did not converge after {iterations} iterations in {context}")]
    NonConvergence { context: String, iterations: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("graph file parse error: {0}")]
    GraphParse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, Error>;
