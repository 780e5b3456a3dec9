//! Stopping boundary in dual (`h`) and wealth (`g`) coordinates.
//!
//! For each time row the contact set of the dual surface is an interval
//! `[h(t), y0]`; its left end is the dual boundary. Under `x = -u_y` it maps
//! to the wealth threshold `g(t) = h(t)^(1/(gamma-1)) - K`: below `g` the
//! investor stops, above it they keep investing.

use crate::dual::DualDomain;
use crate::error::{Error, Result};
use crate::model::{ProblemSpec, UtilityParams};
use crate::scalar::{lit, to_f64, Scalar};
use crate::solver::{DualGrid, DualSolution};
use crate::verify::Check;

/// Boundary at the time nodes `t_0 .. t_{N-1}`. The horizon itself is
/// excluded: there the surface equals the obstacle and every node touches.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBoundaryCurve<T> {
    pub t: Vec<T>,
    pub h: Vec<T>,
    pub g: Vec<T>,
    /// Rows whose contact set covered the whole grid; `h` is then `y_min`.
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedBoundary<T> {
    pub h: Vec<T>,
    pub degenerate: Vec<bool>,
}

/// Left end of the contact set at one time row, refined by linear
/// interpolation of the gap `u - phi` down to the contact tolerance.
fn row_boundary<T: Scalar>(sol: &DualSolution<T>, k: usize) -> Result<(T, bool)> {
    let row = &sol.contact[k];
    let y = &sol.grid.y;
    let t = to_f64(sol.grid.t[k]);
    let first = row.iter().position(|&c| c).ok_or(Error::NoExerciseRegion(t))?;
    if row[first..].iter().any(|&c| !c) {
        return Err(Error::ContactNotConnected(t));
    }
    if first == 0 {
        return Ok((y[0], true));
    }
    let eps = sol.config.contact_tol;
    let (outer, inner) = (sol.gap(k, first - 1), sol.gap(k, first));
    let s = ((outer - eps) / (outer - inner)).max(T::zero()).min(T::one());
    Ok((y[first - 1] + s * (y[first] - y[first - 1]), false))
}

pub fn extract_h<T: Scalar>(sol: &DualSolution<T>) -> Result<ExtractedBoundary<T>> {
    if !sol.obstacle_active {
        return Err(Error::Inconsistent(
            "boundary extraction needs an obstacle solve".into(),
        ));
    }
    let n = sol.grid.n();
    let (h, degenerate) = (0..n)
        .map(|k| row_boundary(sol, k))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(ExtractedBoundary { h, degenerate })
}

fn terminal_denominator<T: Scalar>(spec: &ProblemSpec<T>) -> Result<T> {
    let a2 = spec.constants()?.a2;
    let g = spec.utility.gamma;
    let r = spec.market.r;
    let den = a2 / (lit::<T>(2.0) * (T::one() - g)) - r * (T::one() - g) / g;
    if !(den > T::zero()) {
        return Err(Error::RegimeMismatch(format!(
            "terminal boundary undefined: denominator {:e} <= 0",
            to_f64(den)
        )));
    }
    Ok(den)
}

/// Limit of `h(t)` as `t -> T`:
/// `(r K / (a2/(2(1-gamma)) - r(1-gamma)/gamma))^(gamma-1)`.
pub fn h_terminal<T: Scalar>(spec: &ProblemSpec<T>) -> Result<T> {
    let den = terminal_denominator(spec)?;
    let u = &spec.utility;
    Ok((spec.market.r * u.k / den).powf(u.gamma - T::one()))
}

/// Limit of `g(t)` as `t -> T`: `r K / (a2/(2(1-gamma)) - r(1-gamma)/gamma) - K`.
pub fn g_terminal<T: Scalar>(spec: &ProblemSpec<T>) -> Result<T> {
    let den = terminal_denominator(spec)?;
    let k = spec.utility.k;
    Ok(spec.market.r * k / den - k)
}

/// `g = h^(1/(gamma-1)) - K` nodewise.
pub fn map_to_g<T: Scalar>(h: &[T], utility: &UtilityParams<T>) -> Result<Vec<T>> {
    let y0 = utility.dual_upper();
    h.iter()
        .map(|&v| {
            if !(v > T::zero()) || v > y0 {
                return Err(Error::Inconsistent(format!(
                    "dual boundary {:e} outside (0, y0 = {:e}]",
                    to_f64(v),
                    to_f64(y0)
                )));
            }
            Ok((v.powf(T::one() / (utility.gamma - T::one())) - utility.k).max(T::zero()))
        })
        .collect()
}

/// Inverse of [`map_to_g`]: `h = (g + K)^(gamma-1)`.
pub fn map_to_h<T: Scalar>(g: &[T], utility: &UtilityParams<T>) -> Vec<T> {
    g.iter()
        .map(|&x| (x + utility.k).powf(utility.gamma - T::one()))
        .collect()
}

pub fn extract_curve<T: Scalar>(sol: &DualSolution<T>) -> Result<FreeBoundaryCurve<T>> {
    let ExtractedBoundary { h, degenerate } = extract_h(sol)?;
    let g = map_to_g(&h, &sol.spec.utility)?;
    let n = sol.grid.n();
    Ok(FreeBoundaryCurve {
        t: sol.grid.t[..n].to_vec(),
        h,
        g,
        degenerate,
    })
}

/// Width in `y` of the grid cell containing `y`.
fn y_cell<T: Scalar>(grid: &DualGrid<T>, y: T) -> T {
    let j = grid.locate_y(y);
    grid.y[j + 1] - grid.y[j]
}

/// Width in wealth of the grid cell containing the dual point `y`.
fn x_cell<T: Scalar>(grid: &DualGrid<T>, utility: &UtilityParams<T>, y: T) -> T {
    let j = grid.locate_y(y);
    let e = T::one() / (utility.gamma - T::one());
    grid.y[j].powf(e) - grid.y[j + 1].powf(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReport {
    pub h_nonincreasing: Check,
    pub g_nondecreasing: Check,
    pub h_terminal_limit: Check,
    pub h_lower_bound: Check,
}

impl BoundaryReport {
    pub fn checks(&self) -> [&Check; 4] {
        [
            &self.h_nonincreasing,
            &self.g_nondecreasing,
            &self.h_terminal_limit,
            &self.h_lower_bound,
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

/// Monotonicity of `h` and `g` (violations measured in cells, one allowed),
/// distance of the last extracted `h` from its terminal limit (two cells
/// allowed), and `h(t) >= h(T)` everywhere.
pub fn verify_theorems<T: Scalar>(
    curve: &FreeBoundaryCurve<T>,
    spec: &ProblemSpec<T>,
    grid: &DualGrid<T>,
) -> Result<BoundaryReport> {
    let h_t = h_terminal(spec)?;
    let utility = &spec.utility;
    let n = curve.h.len();
    if n == 0 {
        return Err(Error::Inconsistent("empty boundary curve".into()));
    }

    let mut worst_h = (f64::NEG_INFINITY, None);
    let mut worst_g = (f64::NEG_INFINITY, None);
    for k in 0..n.saturating_sub(1) {
        let rise = to_f64((curve.h[k + 1] - curve.h[k]) / y_cell(grid, curve.h[k]));
        if rise > worst_h.0 {
            worst_h = (rise, Some(k + 1));
        }
        let drop = to_f64((curve.g[k] - curve.g[k + 1]) / x_cell(grid, utility, curve.h[k]));
        if drop > worst_g.0 {
            worst_g = (drop, Some(k + 1));
        }
    }
    if n == 1 {
        worst_h = (0.0, None);
        worst_g = (0.0, None);
    }

    let last = curve.h[n - 1];
    let limit_cells = to_f64((last - h_t).abs() / y_cell(grid, h_t));

    let (min_excess, min_at) = curve
        .h
        .iter()
        .enumerate()
        .map(|(k, &h)| (to_f64(h - h_t), k))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });

    Ok(BoundaryReport {
        h_nonincreasing: Check::at_most("h_nonincreasing_cells", worst_h.0, 1.0).located(worst_h.1),
        g_nondecreasing: Check::at_most("g_nondecreasing_cells", worst_g.0, 1.0).located(worst_g.1),
        h_terminal_limit: Check::at_most("h_terminal_limit_cells", limit_cells, 2.0).located(Some(n - 1)),
        h_lower_bound: Check::at_least("h_above_terminal_limit", min_excess, 0.0).located(Some(min_at)),
    })
}

/// Dual domain check helper: is `h` inside `(y_min, y0]`?
pub fn within_domain<T: Scalar>(h: T, domain: &DualDomain<T>) -> bool {
    h > domain.y_min && h <= domain.y0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketParams;
    use approx::assert_relative_eq;

    fn spec_with(a2: f64, k: f64) -> ProblemSpec<f64> {
        let s2 = 0.18;
        ProblemSpec::new(
            MarketParams::new(0.05, vec![(a2 * s2).sqrt()], vec![vec![s2]]).unwrap(),
            UtilityParams::new(0.5, k).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn terminal_limits_reference() {
        let spec = crate::reference_problem();
        let h = h_terminal(&spec).unwrap();
        assert_relative_eq!(h, (5.0f64 / 3.0).powf(-0.5), max_relative = 1e-12);
        assert_relative_eq!(h, 0.7745967, epsilon = 1e-7);
        let g = g_terminal(&spec).unwrap();
        assert_relative_eq!(g, 2.0 / 3.0, max_relative = 1e-12);
        let mapped = map_to_g(&[h], &spec.utility).unwrap()[0];
        assert_relative_eq!(g, mapped, max_relative = 1e-13);
    }

    #[test]
    fn terminal_limit_coincides_with_y0() {
        // gamma = 0.5, K = 1: denominator a2 - r = rK  =>  a2 = 0.1, on the
        // never-stop edge; the formula still evaluates to y0 = 1.
        let spec = spec_with(0.1, 1.0);
        assert_relative_eq!(h_terminal(&spec).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn terminal_limit_scaling_in_k() {
        let base = h_terminal(&spec_with(0.08, 1.0)).unwrap();
        let scaled = h_terminal(&spec_with(0.08, 2.0)).unwrap();
        assert_relative_eq!(scaled / base, 2.0f64.powf(-0.5), max_relative = 1e-12);
        let g1 = g_terminal(&spec_with(0.08, 1.0)).unwrap();
        let g2 = g_terminal(&spec_with(0.08, 2.0)).unwrap();
        assert_relative_eq!(g2, 2.0 * g1, max_relative = 1e-12);
    }

    #[test]
    fn terminal_limit_rejects_trivial_regime() {
        assert!(matches!(
            h_terminal(&spec_with(0.02, 1.0)),
            Err(Error::RegimeMismatch(_))
        ));
    }

    #[test]
    fn map_examples() {
        let u = UtilityParams::new(0.5, 1.0).unwrap();
        assert_eq!(map_to_g(&[1.0], &u).unwrap(), vec![0.0]);
        assert_relative_eq!(map_to_g(&[0.5], &u).unwrap()[0], 3.0, max_relative = 1e-14);
        assert_relative_eq!(
            map_to_g(&[0.7745967], &u).unwrap()[0],
            2.0 / 3.0,
            epsilon = 1e-6
        );
        assert!(matches!(map_to_g(&[1.01], &u), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn g_and_h_maps_are_inverse() {
        let u = UtilityParams::new(0.3, 1.7).unwrap();
        let y0 = u.dual_upper();
        let h: Vec<f64> = (1..=50).map(|i| y0 * i as f64 / 50.0).collect();
        let g = map_to_g(&h, &u).unwrap();
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        for (a, b) in map_to_h(&g, &u).iter().zip(&h) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    fn reference_grid() -> DualGrid<f64> {
        let spec = crate::reference_problem();
        DualGrid::uniform(DualDomain::new(&spec, 1e-3).unwrap(), 100, 100).unwrap()
    }

    #[test]
    fn increasing_h_fails_monotonicity_with_location() {
        let spec = crate::reference_problem();
        let grid = reference_grid();
        // a jump of about two cells half way
        let h: Vec<f64> = (0..10).map(|k| if k < 5 { 0.80 } else { 0.92 }).collect();
        let curve = FreeBoundaryCurve {
            t: (0..10).map(|k| k as f64 * 0.1).collect(),
            g: map_to_g(&h, &spec.utility).unwrap(),
            h,
            degenerate: vec![false; 10],
        };
        let report = verify_theorems(&curve, &spec, &grid).unwrap();
        assert!(!report.h_nonincreasing.passed);
        assert_eq!(report.h_nonincreasing.location, Some(5));
        assert!(!report.g_nondecreasing.passed);
    }

    #[test]
    fn constant_curve_at_limit_passes() {
        let spec = crate::reference_problem();
        let grid = reference_grid();
        let ht = h_terminal(&spec).unwrap();
        let h = vec![ht; 10];
        let curve = FreeBoundaryCurve {
            t: (0..10).map(|k| k as f64 * 0.1).collect(),
            g: map_to_g(&h, &spec.utility).unwrap(),
            h,
            degenerate: vec![false; 10],
        };
        let report = verify_theorems(&curve, &spec, &grid).unwrap();
        assert!(report.h_nonincreasing.passed);
        assert!(report.h_terminal_limit.passed);
        assert!(report.h_lower_bound.passed);
    }
}
