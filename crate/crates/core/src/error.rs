use thiserror::Error;

use crate::solver::Solution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("parameter vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("interior point solver hit {iterations} iterations (residual {residual:.3e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        /// Best iterate found, flagged as not converged.
        best: Box<Solution>,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("local KKT Jacobian of subproblem {subproblem} is singular")]
    SingularLocalJacobian { subproblem: usize },

    #[error("coupling system is singular")]
    SingularCoupling,

    #[error("global KKT Jacobian is singular")]
    SingularGlobalJacobian,

    #[error("local projection of node {node} is singular (|V| = {size}, min singular value {min_sv:.3e})")]
    SingularLocalProjection {
        node: usize,
        size: usize,
        min_sv: f64,
    },

    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("active set changes when perturbing parameter {param}")]
    ActiveSetFlip { param: usize },

    #[error("invalid singular values: upper {upper}, lower {lower}")]
    InvalidSingularValues { upper: f64, lower: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by singular or ill-posed numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MaxIterations { .. }
                | Error::NumericalFailure(_)
                | Error::SingularLocalJacobian { .. }
                | Error::SingularCoupling
                | Error::SingularGlobalJacobian
                | Error::SingularLocalProjection { .. }
                | Error::ActiveSetFlip { .. }
        )
    }
}
