//! Small dense MILP solver: a solver-agnostic model IR, a two-phase primal
//! simplex LP core with bounded variables, best-bound branch-and-bound over
//! binaries, and a deterministic text export for external solvers.

mod branch;
mod export;
mod model;
mod simplex;

pub use branch::{solve, SolveParams, SolveResult, SolveStatus};
pub use export::{export_model, import_model};
pub use model::{Constraint, MilpModel, Sense, VarId, VarKind, Variable};
pub use simplex::{lp_solve, lp_solve_relaxation, LpResult, LpStatus, FEAS_TOL, PIVOT_TOL};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("model parse error: {0}")]
    Parse(String),
}
