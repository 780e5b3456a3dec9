//! Single backward time steps of the theta scheme.
//!
//! With `A` the interior part of [`DiscreteOperator`], one step from `t + dt`
//! to `t` solves
//!
//! ```text
//! (I + theta dt A) u_now = (I - (1 - theta) dt A) u_next
//! ```
//!
//! with Dirichlet values at both ends, either as a plain linear system or as a
//! linear complementarity problem against an obstacle row.

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Scalar};

use super::config::SolverConfig;
use super::operator::DiscreteOperator;
use super::tridiag::solve_tridiagonal;

/// Data shared by every step variant.
#[derive(Debug, Clone, Copy)]
pub struct StepData<'a, T> {
    pub u_next: &'a [T],
    pub dt: T,
    pub theta: T,
    /// Dirichlet value at the left end (`y_min`) at the new time level.
    pub left: T,
    /// Dirichlet value at the right end (`y0`) at the new time level.
    pub right: T,
}

/// Interior tridiagonal system of one step; index `i` is grid node `i + 1`.
#[derive(Debug, Clone)]
pub(crate) struct ThetaSystem<T> {
    pub sub: Vec<T>,
    pub diag: Vec<T>,
    pub sup: Vec<T>,
    pub rhs: Vec<T>,
}

impl<T: Scalar> ThetaSystem<T> {
    pub fn build(op: &DiscreteOperator<T>, step: &StepData<'_, T>) -> Self {
        let m = op.len() - 1;
        let n = m - 1;
        let implicit = step.theta * step.dt;
        let explicit = (T::one() - step.theta) * step.dt;
        let u = step.u_next;
        let mut sys = ThetaSystem {
            sub: Vec::with_capacity(n),
            diag: Vec::with_capacity(n),
            sup: Vec::with_capacity(n),
            rhs: Vec::with_capacity(n),
        };
        for j in 1..m {
            sys.sub.push(implicit * op.sub[j]);
            sys.diag.push(T::one() + implicit * op.diag[j]);
            sys.sup.push(implicit * op.sup[j]);
            let mut b = u[j] - explicit * op.apply_row(u, j);
            if j == 1 {
                b = b - implicit * op.sub[j] * step.left;
            }
            if j == m - 1 {
                b = b - implicit * op.sup[j] * step.right;
            }
            sys.rhs.push(b);
        }
        sys
    }

    /// `(B x - rhs)_i` for the interior vector `x`.
    pub fn residual(&self, x: &[T], i: usize) -> T {
        let n = self.diag.len();
        let mut s = self.diag[i] * x[i] - self.rhs[i];
        if i > 0 {
            s = s + self.sub[i] * x[i - 1];
        }
        if i + 1 < n {
            s = s + self.sup[i] * x[i + 1];
        }
        s
    }
}

fn check_lengths<T>(op: &DiscreteOperator<T>, step: &StepData<'_, T>) -> Result<()> {
    if op.diag.len() < 3 || step.u_next.len() != op.diag.len() {
        return Err(Error::Shape(format!(
            "row of length {} does not match operator of size {}",
            step.u_next.len(),
            op.diag.len()
        )));
    }
    Ok(())
}

fn assemble_row<T: Scalar>(step: &StepData<'_, T>, interior: Vec<T>) -> Vec<T> {
    let mut row = Vec::with_capacity(interior.len() + 2);
    row.push(step.left);
    row.extend(interior);
    row.push(step.right);
    row
}

/// One theta step of the obstacle-free equation via a direct tridiagonal solve.
pub fn step_linear<T: Scalar>(op: &DiscreteOperator<T>, step: &StepData<'_, T>) -> Result<Vec<T>> {
    check_lengths(op, step)?;
    let sys = ThetaSystem::build(op, step);
    let interior = solve_tridiagonal(&sys.sub, &sys.diag, &sys.sup, &sys.rhs)?;
    Ok(assemble_row(step, interior))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStep<T> {
    pub row: Vec<T>,
    pub iterations: usize,
}

/// One theta step of the obstacle problem: projected SOR on
/// `B u >= b, u >= phi, (B u - b).(u - phi) = 0`.
///
/// `obstacle` has the full row length; entries may be `-inf` to disable the
/// constraint at a node.
pub fn step_projected<T: Scalar>(
    op: &DiscreteOperator<T>,
    step: &StepData<'_, T>,
    obstacle: &[T],
    config: &SolverConfig<T>,
) -> Result<ProjectedStep<T>> {
    check_lengths(op, step)?;
    if obstacle.len() != step.u_next.len() {
        return Err(Error::Shape("obstacle row length mismatch".into()));
    }
    let sys = ThetaSystem::build(op, step);
    let n = sys.diag.len();
    let lower = &obstacle[1..=n];
    let mut x: Vec<T> = (0..n).map(|i| step.u_next[i + 1].max(lower[i])).collect();
    let omega = config.psor_omega;

    let mut last = T::infinity();
    for it in 1..=config.psor_max_iter {
        let mut delta = T::zero();
        for i in 0..n {
            let mut s = sys.rhs[i];
            if i > 0 {
                s = s - sys.sub[i] * x[i - 1];
            }
            if i + 1 < n {
                s = s - sys.sup[i] * x[i + 1];
            }
            let gs = s / sys.diag[i];
            let next = (x[i] + omega * (gs - x[i])).max(lower[i]);
            delta = delta.max((next - x[i]).abs());
            x[i] = next;
        }
        last = delta;
        if delta <= config.psor_tol {
            return Ok(ProjectedStep {
                row: assemble_row(step, x),
                iterations: it,
            });
        }
    }
    Err(Error::PsorNonConvergence {
        iterations: config.psor_max_iter,
        residual: to_f64(last),
    })
}

/// One theta step of the penalised equation
/// `B u + penalty * P(u) (u - phi) = b`, where `P(u)` marks nodes below the
/// obstacle, solved by active-set iteration.
pub fn step_penalty<T: Scalar>(
    op: &DiscreteOperator<T>,
    step: &StepData<'_, T>,
    obstacle: &[T],
    penalty: T,
) -> Result<Vec<T>> {
    check_lengths(op, step)?;
    let sys = ThetaSystem::build(op, step);
    let n = sys.diag.len();
    let lower = &obstacle[1..=n];
    let mut x = solve_tridiagonal(&sys.sub, &sys.diag, &sys.sup, &sys.rhs)?;
    let mut active: Vec<bool> = x.iter().zip(lower).map(|(v, p)| v < p).collect();
    for _ in 0..200 {
        let diag: Vec<T> = (0..n)
            .map(|i| if active[i] { sys.diag[i] + penalty } else { sys.diag[i] })
            .collect();
        let rhs: Vec<T> = (0..n)
            .map(|i| if active[i] { sys.rhs[i] + penalty * lower[i] } else { sys.rhs[i] })
            .collect();
        x = solve_tridiagonal(&sys.sub, &diag, &sys.sup, &rhs)?;
        let next: Vec<bool> = x.iter().zip(lower).map(|(v, p)| v < p).collect();
        if next == active {
            return Ok(assemble_row(step, x));
        }
        active = next;
    }
    Err(Error::PsorNonConvergence {
        iterations: 200,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::DualDomain;
    use crate::solver::grid::DualGrid;
    use crate::solver::operator::assemble_operator;
    use approx::assert_relative_eq;

    fn grid(m: usize) -> DualGrid<f64> {
        DualGrid::uniform(
            DualDomain {
                y0: 1.0,
                y_min: 1e-3,
                horizon: 1.0,
            },
            m,
            100,
        )
        .unwrap()
    }

    // absolute update tolerance; rows reach ~1e3 near y_min
    fn tight() -> SolverConfig<f64> {
        SolverConfig {
            psor_tol: 1e-12,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn identity_evolution_without_diffusion_or_discounting() {
        let g = grid(60);
        let op = assemble_operator(&g, 0.0, 0.0).unwrap();
        let u: Vec<f64> = g.y.iter().map(|y| 1.0 / y + y).collect();
        let step = StepData {
            u_next: &u,
            dt: g.dt,
            theta: 0.5,
            left: u[0],
            right: u[60],
        };
        let out = step_linear(&op, &step).unwrap();
        for (a, b) in out.iter().zip(&u) {
            assert_relative_eq!(*a, *b, max_relative = 1e-15);
        }
    }

    #[test]
    fn implicit_discount_step() {
        let g = grid(60);
        let op = assemble_operator(&g, 0.0, 0.05).unwrap();
        let u: Vec<f64> = g.y.iter().map(|y| y.sqrt()).collect();
        let step = StepData {
            u_next: &u,
            dt: g.dt,
            theta: 1.0,
            left: 0.0,
            right: 0.0,
        };
        let out = step_linear(&op, &step).unwrap();
        for j in 1..60 {
            assert_relative_eq!(out[j], u[j] / (1.0 + 0.05 * g.dt), max_relative = 1e-14);
        }
    }

    #[test]
    fn disabled_obstacle_matches_linear_step() {
        let g = grid(80);
        let op = assemble_operator(&g, 0.08, 0.05).unwrap();
        let u: Vec<f64> = g.y.iter().map(|y| 1.0 / y + y).collect();
        let step = StepData {
            u_next: &u,
            dt: g.dt,
            theta: 0.5,
            left: u[0] * 1.001,
            right: 2.0,
        };
        let lin = step_linear(&op, &step).unwrap();
        let none = vec![f64::NEG_INFINITY; 81];
        let proj = step_projected(&op, &step, &none, &tight()).unwrap();
        for (a, b) in lin.iter().zip(&proj.row) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn supersolution_obstacle_stays_in_contact() {
        // phi(y) = 1/y + y with r = 0.05, a2 = 0.01: L phi = (-0.01 + 0.05) /y ... >= 0
        let g = grid(80);
        let op = assemble_operator(&g, 0.01, 0.05).unwrap();
        let phi: Vec<f64> = g.y.iter().map(|y| 1.0 / y + y).collect();
        for j in 1..80 {
            assert!(op.apply_row(&phi, j) >= 0.0);
        }
        let step = StepData {
            u_next: &phi,
            dt: g.dt,
            theta: 1.0,
            left: phi[0],
            right: phi[80],
        };
        let out = step_projected(&op, &step, &phi, &tight()).unwrap();
        assert_eq!(out.row, phi);
    }

    #[test]
    fn single_interior_node_is_scalar_lcp() {
        let g = grid(2);
        let op = assemble_operator(&g, 0.08, 0.05).unwrap();
        let u = vec![3.0, 2.0, 1.0];
        for &obstacle_mid in &[0.5, 1.5, 2.5, 4.0] {
            let obstacle = vec![3.0, obstacle_mid, 1.0];
            let step = StepData {
                u_next: &u,
                dt: 0.1,
                theta: 1.0,
                left: 3.0,
                right: 1.0,
            };
            let lin = step_linear(&op, &step).unwrap()[1];
            let proj = step_projected(&op, &step, &obstacle, &tight()).unwrap();
            assert_relative_eq!(proj.row[1], lin.max(obstacle_mid), max_relative = 1e-12);
        }
    }

    #[test]
    fn psor_iteration_cap_reports_failure() {
        let g = grid(80);
        let op = assemble_operator(&g, 0.08, 0.05).unwrap();
        let u: Vec<f64> = g.y.iter().map(|y| 1.0 / y + y).collect();
        let step = StepData {
            u_next: &u,
            dt: g.dt,
            theta: 0.5,
            left: u[0] * 1.1,
            right: 2.0,
        };
        let cfg = SolverConfig {
            psor_max_iter: 1,
            psor_tol: 1e-15,
            ..SolverConfig::default()
        };
        assert!(matches!(
            step_projected(&op, &step, &u, &cfg),
            Err(Error::PsorNonConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn penalty_approaches_projection() {
        let g = grid(100);
        let op = assemble_operator(&g, 0.08, 0.05).unwrap();
        let phi: Vec<f64> = g.y.iter().map(|y| 1.0 / y + y).collect();
        let step = StepData {
            u_next: &phi,
            dt: g.dt,
            theta: 1.0,
            left: phi[0] * 1.0003,
            right: 2.0,
        };
        let proj = step_projected(&op, &step, &phi, &tight()).unwrap().row;
        let mut prev = f64::INFINITY;
        for &p in &[1e4, 1e6, 1e8] {
            let pen = step_penalty(&op, &step, &phi, p).unwrap();
            let err = pen
                .iter()
                .zip(&proj)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= prev);
            prev = err;
        }
        assert!(prev < 1e-8, "penalty error {prev}");
    }
}
