use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),
    /// Arrays built on different grids were combined.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Contrast outside [0, 1) breaks uniform ellipticity.
    #[error("ellipticity error: contrast tau = {0} must lie in [0, 1)")]
    Ellipticity(f64),
    /// The massless Green function does not exist in d <= 2.
    #[error("divergence error: massless Green function requires d >= 3, got d = {0}")]
    Divergence(usize),
    /// x = 0 was passed to a kernel that is singular there.
    #[error("singularity error: {0}")]
    Singularity(String),
    /// Iterative solver stopped before reaching the tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64, history: Vec<f64> },
    /// A quadrature failed its own refinement test.
    #[error("quadrature did not converge: last two refinements {coarse:.15e} and {fine:.15e}")]
    Quadrature { coarse: f64, fine: f64 },
    /// A Hermite expansion left too much mass beyond the degree cap.
    #[error("Hermite degree {degree} too small: tail mass {tail:.3e}; increase the degree cap")]
    Degree { degree: usize, tail: f64 },
    /// A least-squares fit was ill-posed.
    #[error("fit error: {0}")]
    Fit(String),
    /// Requested combination is outside what the implementation evaluates.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A search exhausted its candidates without a decision.
    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;
