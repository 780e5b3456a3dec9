use crate::dual::{dual_boundary_value, merton_dual, Obstacle};
use crate::error::{Error, Result};
use crate::model::{DerivedConstants, ProblemSpec, Regime};
use crate::scalar::Scalar;

use super::config::SolverConfig;
use super::grid::DualGrid;
use super::operator::{assemble_operator, DiscreteOperator};
use super::step::{step_linear, step_penalty, step_projected, StepData};

/// Terminal row and Dirichlet columns of a backward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData<T> {
    pub terminal: Vec<T>,
    /// Value at `y_min`, one entry per time node.
    pub left: Vec<T>,
    /// Value at `y0`, one entry per time node.
    pub right: Vec<T>,
}

impl<T: Scalar> BoundaryData<T> {
    /// Obstacle terminal row, `K^gamma/gamma` at `y0`, and the no-stopping
    /// asymptote plus the linear `K y` term at `y_min`.
    pub fn standard(spec: &ProblemSpec<T>, grid: &DualGrid<T>, constants: &DerivedConstants<T>) -> Self {
        let u = &spec.utility;
        let ob = Obstacle::new(u);
        let m = grid.m();
        let y_min = grid.y[0];
        let corner = dual_boundary_value(u);
        let mut terminal: Vec<T> = grid.y.iter().map(|&y| ob.value(y)).collect();
        terminal[m] = corner;
        let left = grid
            .t
            .iter()
            .map(|&t| {
                merton_dual(y_min, grid.domain.horizon - t, u, constants.growth, spec.market.r)
                    + u.k * y_min
            })
            .collect();
        let right = vec![corner; grid.t.len()];
        Self {
            terminal,
            left,
            right,
        }
    }

    /// Closed-form no-stopping dual on the whole boundary of the grid; used to
    /// check the linear solver against an exact solution.
    pub fn merton_oracle(spec: &ProblemSpec<T>, grid: &DualGrid<T>, constants: &DerivedConstants<T>) -> Self {
        let u = &spec.utility;
        let (growth, r) = (constants.growth, spec.market.r);
        let horizon = grid.domain.horizon;
        let m = grid.m();
        let terminal = grid.y.iter().map(|&y| merton_dual(y, T::zero(), u, growth, r)).collect();
        let left = grid
            .t
            .iter()
            .map(|&t| merton_dual(grid.y[0], horizon - t, u, growth, r))
            .collect();
        let right = grid
            .t
            .iter()
            .map(|&t| merton_dual(grid.y[m], horizon - t, u, growth, r))
            .collect();
        Self {
            terminal,
            left,
            right,
        }
    }
}

/// Solved dual surface. Row `n` of `u` and `contact` belongs to time `t_n`.
#[derive(Debug, Clone)]
pub struct DualSolution<T> {
    pub u: Vec<Vec<T>>,
    /// Obstacle row (`phi` at every node, `K^gamma/gamma` at `y0`).
    pub phi: Vec<T>,
    pub contact: Vec<Vec<bool>>,
    pub grid: DualGrid<T>,
    pub spec: ProblemSpec<T>,
    pub constants: DerivedConstants<T>,
    pub config: SolverConfig<T>,
    pub operator: DiscreteOperator<T>,
    pub boundary: BoundaryData<T>,
    /// `thetas[n]` is the weighting used to compute row `n` from row `n + 1`.
    pub thetas: Vec<T>,
    pub psor_iterations: Vec<usize>,
    pub obstacle_active: bool,
}

impl<T: Scalar> DualSolution<T> {
    pub fn gap(&self, n: usize, j: usize) -> T {
        self.u[n][j] - self.phi[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Constraint<T> {
    None,
    Projected,
    Penalty(T),
}

fn obstacle_row<T: Scalar>(spec: &ProblemSpec<T>, grid: &DualGrid<T>) -> Vec<T> {
    let ob = Obstacle::new(&spec.utility);
    let m = grid.m();
    let mut phi: Vec<T> = grid.y.iter().map(|&y| ob.value(y)).collect();
    phi[m] = dual_boundary_value(&spec.utility);
    phi
}

fn run<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
    config: &SolverConfig<T>,
    data: BoundaryData<T>,
    constraint: Constraint<T>,
) -> Result<DualSolution<T>> {
    config.validate()?;
    let constants = spec.constants()?;
    let (m, n) = (grid.m(), grid.n());
    if data.terminal.len() != m + 1 || data.left.len() != n + 1 || data.right.len() != n + 1 {
        return Err(Error::Shape("boundary data does not match grid".into()));
    }
    let operator = assemble_operator(grid, constants.a2, spec.market.r)?;
    let phi = obstacle_row(spec, grid);

    let mut u = vec![Vec::new(); n + 1];
    u[n] = data.terminal.clone();
    let mut thetas = vec![T::one(); n];
    let mut psor_iterations = vec![0; n];

    for k in (0..n).rev() {
        let theta = config.theta_for_step(n - 1 - k);
        thetas[k] = theta;
        let step = StepData {
            u_next: &u[k + 1],
            dt: grid.dt,
            theta,
            left: data.left[k],
            right: data.right[k],
        };
        u[k] = match constraint {
            Constraint::None => step_linear(&operator, &step)?,
            Constraint::Projected => {
                let out = step_projected(&operator, &step, &phi, config)?;
                psor_iterations[k] = out.iterations;
                out.row
            }
            Constraint::Penalty(p) => step_penalty(&operator, &step, &phi, p)?,
        };
    }

    let obstacle_active = constraint != Constraint::None;
    let contact = u
        .iter()
        .map(|row| {
            row.iter()
                .zip(&phi)
                .map(|(&v, &p)| obstacle_active && v - p <= config.contact_tol)
                .collect()
        })
        .collect();

    Ok(DualSolution {
        u,
        phi,
        contact,
        grid: grid.clone(),
        spec: spec.clone(),
        constants,
        config: *config,
        operator,
        boundary: data,
        thetas,
        psor_iterations,
        obstacle_active,
    })
}

fn require_regime<T: Scalar>(spec: &ProblemSpec<T>, wanted: Regime) -> Result<()> {
    let regime = spec.regime()?;
    if regime != wanted {
        return Err(Error::RegimeMismatch(format!(
            "expected {}, instance is {}",
            wanted.name(),
            regime.name()
        )));
    }
    Ok(())
}

/// Backward solve of the dual obstacle problem with projected SOR.
pub fn solve_dual_vi<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
    config: &SolverConfig<T>,
) -> Result<DualSolution<T>> {
    require_regime(spec, Regime::FreeBoundary)?;
    let constants = spec.constants()?;
    let data = BoundaryData::standard(spec, grid, &constants);
    run(spec, grid, config, data, Constraint::Projected)
}

/// Backward solve of the obstacle-free equation for the never-stop regime.
pub fn solve_dual_linear<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
    config: &SolverConfig<T>,
) -> Result<DualSolution<T>> {
    require_regime(spec, Regime::NeverStop)?;
    let constants = spec.constants()?;
    let data = BoundaryData::standard(spec, grid, &constants);
    run(spec, grid, config, data, Constraint::None)
}

/// Obstacle-free solve with caller-supplied data, in any regime.
pub fn solve_linear_with<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
    config: &SolverConfig<T>,
    data: BoundaryData<T>,
) -> Result<DualSolution<T>> {
    run(spec, grid, config, data, Constraint::None)
}

/// Obstacle problem with caller-supplied data, in any regime.
pub fn solve_vi_with<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
    config: &SolverConfig<T>,
    data: BoundaryData<T>,
) -> Result<DualSolution<T>> {
    run(spec, grid, config, data, Constraint::Projected)
}

/// Penalty-method cross-check of [`solve_dual_vi`].
pub fn solve_dual_penalty<T: Scalar>(
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
    config: &SolverConfig<T>,
    penalty: T,
) -> Result<DualSolution<T>> {
    require_regime(spec, Regime::FreeBoundary)?;
    let constants = spec.constants()?;
    let data = BoundaryData::standard(spec, grid, &constants);
    run(spec, grid, config, data, Constraint::Penalty(penalty))
}
