//! Backward solver for the dual obstacle problem
//!
//! ```text
//! min{ -u_t - (a2/2) y^2 u_yy + r u,  u - phi(y) } = 0,   y_min < y < y0
//! u(y0, t) = K^gamma / gamma,   u(y, T) = phi(y)
//! ```
//!
//! on a uniform grid in `z = ln y`, where the degenerate coefficient
//! `y^2 u_yy` becomes the constant-coefficient `u_zz - u_z`. Time stepping is
//! theta-weighted with a few fully implicit start-up steps; the obstacle is
//! enforced by projected SOR (a penalty variant exists for cross-checks).

mod config;
mod diagnostics;
mod grid;
mod operator;
mod solve;
mod step;
mod tridiag;

pub use config::{default_contact_tol, SolverConfig};
pub use diagnostics::{residual_report, ResidualReport, StepResiduals};
pub use grid::{build_grid, DualGrid, MIN_INTERVALS};
pub use operator::{assemble_operator, DiscreteOperator};
pub use solve::{
    solve_dual_linear, solve_dual_penalty, solve_dual_vi, solve_linear_with, solve_vi_with,
    BoundaryData, DualSolution,
};
pub use step::{step_linear, step_penalty, step_projected, ProjectedStep, StepData};
pub use tridiag::solve_tridiagonal;
