//! Sensitivities of separable constraint-coupled quadratic programs.
//!
//! The optimal solution of `N` strictly convex QP subproblems joined by affine
//! coupling constraints is differentiated with respect to problem parameters
//! three ways: through the full KKT system, through local Jacobians combined by
//! a central coupling solve, and through a block-Jacobi scheme on a simulated
//! synchronous network.

pub mod coupling;
pub mod distnet;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod linalg;
pub mod localdiff;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Problem, RandomConfig, Structure};
pub use solver::{solve, verify_assumptions, Solution, SolveOptions};
