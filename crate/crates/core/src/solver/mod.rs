//! ADMM engine for separable conic programs with box, second-order-cone and
//! positive-semidefinite memberships.

mod admm;
mod affine;
mod cones;
mod program;

pub use admm::{admm_solve, admm_solve_from, ADMMParams, ADMMState, Solution, TraceRow};
pub use cones::{project_psd, project_psd_real, project_soc, rank1_gap, HermitianMatrix};
pub use program::{psd_block_len, AffineRow, Cone, ConicProgram, VarId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid program: {0}")]
    Program(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid ADMM parameters: {0}")]
    Params(String),
    #[error("ADMM diverged: non-finite iterate at iteration {iteration}")]
    Divergence { iteration: usize },
}
