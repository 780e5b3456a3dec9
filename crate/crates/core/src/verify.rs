//! Pass/fail records and the shape checks run on a solved dual surface.

use serde::Serialize;

use crate::scalar::{to_f64, Scalar};
use crate::solver::DualSolution;

/// One named check. `margin` is the measured worst value; whether it must sit
/// below or above `tolerance` depends on the check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    #[serde(rename = "check_name")]
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub tolerance: f64,
    /// Index of the worst offender (time row, node or path), when meaningful.
    #[serde(skip)]
    pub location: Option<usize>,
}

impl Check {
    /// Passes iff `margin <= tolerance`.
    pub fn at_most(name: &str, margin: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: margin <= tolerance,
            margin,
            tolerance,
            location: None,
        }
    }

    /// Passes iff `margin >= tolerance`.
    pub fn at_least(name: &str, margin: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: margin >= tolerance,
            margin,
            tolerance,
            location: None,
        }
    }

    pub fn located(mut self, at: Option<usize>) -> Self {
        self.location = at;
        self
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} (margin {:.3e}, tolerance {:.3e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.margin,
            self.tolerance
        )?;
        if let Some(at) = self.location {
            write!(f, " at {at}")?;
        }
        Ok(())
    }
}

/// Tolerances of [`surface_checks`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceTolerances {
    /// Relative slack of `phi <= u <= e^{A(T-t)} phi`.
    pub bounds: f64,
    /// Upper bound on the divided differences in time and in `y`.
    pub monotone: f64,
    /// Convexity is checked on nodes at least this many cells from `y_min`.
    pub convexity_skip: usize,
}

impl Default for SurfaceTolerances {
    fn default() -> Self {
        Self {
            bounds: 1e-6,
            monotone: 1e-9,
            convexity_skip: 2,
        }
    }
}

fn worst<I: Iterator<Item = (f64, usize)>>(it: I, larger_is_worse: bool) -> (f64, Option<usize>) {
    let start = if larger_is_worse {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    it.fold((start, None), |acc, (v, at)| {
        let better = if larger_is_worse { v > acc.0 } else { v < acc.0 };
        if better {
            (v, Some(at))
        } else {
            acc
        }
    })
}

/// `max (phi - u)/|phi|` and `max (u - e^{A(T-t)} phi)/|e^{A(T-t)} phi|`.
/// Locations are time rows.
pub fn value_bounds<T: Scalar>(sol: &DualSolution<T>, tol: f64) -> [Check; 2] {
    let growth = to_f64(sol.constants.growth);
    let horizon = to_f64(sol.grid.domain.horizon);
    let rows = sol.u.iter().enumerate();
    let (below, below_at) = worst(
        rows.clone().flat_map(|(k, row)| {
            row.iter()
                .zip(&sol.phi)
                .map(move |(&u, &p)| ((to_f64(p) - to_f64(u)) / to_f64(p).abs(), k))
        }),
        true,
    );
    let (above, above_at) = worst(
        rows.flat_map(|(k, row)| {
            let scale = (growth * (horizon - to_f64(sol.grid.t[k]))).exp();
            row.iter().zip(&sol.phi).map(move |(&u, &p)| {
                let w = scale * to_f64(p);
                ((to_f64(u) - w) / w.abs(), k)
            })
        }),
        true,
    );
    [
        Check::at_most("value_lower_bound", below, tol).located(below_at),
        Check::at_most("value_upper_bound", above, tol).located(above_at),
    ]
}

/// `max (u(t_{k+1}) - u(t_k)) / dt` over all nodes.
pub fn time_monotonicity<T: Scalar>(sol: &DualSolution<T>, tol: f64) -> Check {
    let dt = to_f64(sol.grid.dt);
    let (m, at) = worst(
        sol.u.windows(2).enumerate().flat_map(|(k, w)| {
            w[0].iter()
                .zip(&w[1])
                .map(move |(&now, &later)| ((to_f64(later) - to_f64(now)) / dt, k))
        }),
        true,
    );
    Check::at_most("time_monotonicity", m, tol).located(at)
}

/// `max (gap_{j+1} - gap_j) / (y_{j+1} - y_j)` over all rows.
pub fn gap_monotonicity<T: Scalar>(sol: &DualSolution<T>, tol: f64) -> Check {
    let y = &sol.grid.y;
    let m = sol.grid.m();
    let (v, at) = worst(
        (0..sol.u.len()).flat_map(|k| {
            (0..m).map(move |j| {
                let d = to_f64(sol.gap(k, j + 1) - sol.gap(k, j)) / to_f64(y[j + 1] - y[j]);
                (d, k)
            })
        }),
        true,
    );
    Check::at_most("gap_monotonicity", v, tol).located(at)
}

/// Minimum three-point second divided difference in `y` on interior nodes at
/// least `skip` cells from the left edge; must be strictly positive.
pub fn convexity<T: Scalar>(sol: &DualSolution<T>, skip: usize) -> Check {
    let y = &sol.grid.y;
    let m = sol.grid.m();
    let first = skip.max(1);
    let (v, at) = worst(
        sol.u.iter().enumerate().flat_map(|(k, u)| {
            (first..m).map(move |j| {
                let (a, b, c) = (to_f64(u[j - 1]), to_f64(u[j]), to_f64(u[j + 1]));
                let (ya, yb, yc) = (to_f64(y[j - 1]), to_f64(y[j]), to_f64(y[j + 1]));
                let second = 2.0 * ((c - b) / (yc - yb) - (b - a) / (yb - ya)) / (yc - ya);
                (second, k)
            })
        }),
        false,
    );
    let mut check = Check::at_least("convexity", v, 0.0).located(at);
    check.passed = v > 0.0;
    check
}

/// Bounds, both monotonicities and convexity of a solved surface.
pub fn surface_checks<T: Scalar>(sol: &DualSolution<T>, tol: &SurfaceTolerances) -> Vec<Check> {
    let mut out: Vec<Check> = value_bounds(sol, tol.bounds).into();
    out.push(time_monotonicity(sol, tol.monotone));
    out.push(gap_monotonicity(sol, tol.monotone));
    out.push(convexity(sol, tol.convexity_skip));
    out
}
