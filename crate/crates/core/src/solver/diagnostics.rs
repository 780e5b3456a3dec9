use crate::scalar::Scalar;

use super::solve::DualSolution;
use super::step::{StepData, ThetaSystem};

/// Residuals of one backward step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResiduals<T> {
    /// `max |min(B u - b, u - phi)|` over interior nodes (plain `|B u - b|`
    /// when the obstacle is disabled).
    pub complementarity: T,
    /// `max |B u - b| / max(|b|, 1)` over interior nodes not in contact.
    pub pde: T,
    /// `max (phi - u)^+` over the whole row.
    pub obstacle_violation: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport<T> {
    /// Entry `n` describes row `n`, `n < N`.
    pub steps: Vec<StepResiduals<T>>,
    pub terminal_obstacle_violation: T,
}

impl<T: Scalar> ResidualReport<T> {
    pub fn max_complementarity(&self) -> T {
        self.steps.iter().fold(T::zero(), |a, s| a.max(s.complementarity))
    }

    pub fn max_pde(&self) -> T {
        self.steps.iter().fold(T::zero(), |a, s| a.max(s.pde))
    }

    pub fn max_obstacle_violation(&self) -> T {
        self.steps
            .iter()
            .fold(self.terminal_obstacle_violation, |a, s| a.max(s.obstacle_violation))
    }
}

fn violation<T: Scalar>(row: &[T], phi: &[T]) -> T {
    row.iter()
        .zip(phi)
        .fold(T::zero(), |a, (&u, &p)| a.max(p - u))
}

pub fn residual_report<T: Scalar>(sol: &DualSolution<T>) -> ResidualReport<T> {
    let n = sol.grid.n();
    let m = sol.grid.m();
    let steps = (0..n)
        .map(|k| {
            let step = StepData {
                u_next: &sol.u[k + 1],
                dt: sol.grid.dt,
                theta: sol.thetas[k],
                left: sol.u[k][0],
                right: sol.u[k][m],
            };
            let sys = ThetaSystem::build(&sol.operator, &step);
            let interior = &sol.u[k][1..m];
            let mut comp = T::zero();
            let mut pde = T::zero();
            for i in 0..m - 1 {
                let r = sys.residual(interior, i);
                let j = i + 1;
                let c = if sol.obstacle_active {
                    r.min(sol.gap(k, j))
                } else {
                    r
                };
                comp = comp.max(c.abs());
                if !sol.contact[k][j] {
                    pde = pde.max(r.abs() / sys.rhs[i].abs().max(T::one()));
                }
            }
            StepResiduals {
                complementarity: comp,
                pde,
                obstacle_violation: if sol.obstacle_active {
                    violation(&sol.u[k], &sol.phi)
                } else {
                    T::zero()
                },
            }
        })
        .collect();
    ResidualReport {
        steps,
        terminal_obstacle_violation: violation(&sol.u[n], &sol.phi),
    }
}
