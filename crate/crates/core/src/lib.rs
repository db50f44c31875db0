//! Convex LP/QP solver: a proximal-point outer loop around an infeasible
//! predictor-corrector interior point method, with direct and
//! Krylov-based linear algebra.

pub mod backend;
pub mod bench;
pub mod ipm;
pub mod krylov;
pub mod ldl;
pub mod model;
pub mod mps;
pub mod newton;
pub mod ppm;
pub mod precond;
pub mod sparse;

pub use model::{QpModel, RegParams};
pub use ppm::{solve, Mode, SolveResult, SolverOptions, Status};
