//! Geometry of the dual (Legendre) problem.
//!
//! The dual value `v(y, t) = max_x (V(x, t) - x y)` lives on `0 < y <= y0`
//! with `y0 = K^(gamma - 1)`, the marginal utility at zero wealth. Its
//! terminal datum doubles as the obstacle of the simplified variational
//! inequality:
//!
//! ```text
//! phi(y) = (1 - gamma)/gamma * y^(gamma/(gamma-1)) + K y
//! ```
//!
//! This module also carries the two pointwise certificates that tie a dual
//! solution back to the original constrained problem.

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, UtilityParams};
use crate::scalar::{lit, to_f64, Scalar};

/// Truncated dual domain `[y_min, y0] x [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDomain<T> {
    pub y0: T,
    pub y_min: T,
    pub horizon: T,
}

impl<T: Scalar> DualDomain<T> {
    /// Domain with `y_min = factor * y0`; the factor must lie in `(0, 0.1]`.
    pub fn new(spec: &ProblemSpec<T>, y_min_factor: T) -> Result<Self> {
        if !(y_min_factor > T::zero() && y_min_factor <= lit(0.1)) {
            return Err(Error::Config(format!(
                "y_min_factor must lie in (0, 0.1], got {y_min_factor}"
            )));
        }
        let y0 = spec.utility.dual_upper();
        Ok(Self {
            y0,
            y_min: y_min_factor * y0,
            horizon: spec.horizon,
        })
    }
}

/// Obstacle `phi` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle<T> {
    pub gamma: T,
    pub k: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleEval<T> {
    pub value: T,
    pub slope: T,
    pub curvature: T,
}

impl<T: Scalar> Obstacle<T> {
    pub fn new(utility: &UtilityParams<T>) -> Self {
        Self {
            gamma: utility.gamma,
            k: utility.k,
        }
    }

    /// Checked evaluation of `phi`, `phi'` and `phi''`.
    pub fn evaluate(&self, y: T) -> Result<ObstacleEval<T>> {
        if !(y > T::zero()) {
            return Err(Error::Domain(format!("dual variable must be positive, got {y}")));
        }
        Ok(ObstacleEval {
            value: self.value(y),
            slope: self.slope(y),
            curvature: self.curvature(y),
        })
    }

    /// `phi(y)`; requires `y > 0`.
    #[inline]
    pub fn value(&self, y: T) -> T {
        let g = self.gamma;
        (T::one() - g) / g * y.powf(g / (g - T::one())) + self.k * y
    }

    /// `phi'(y) = K - y^(1/(gamma-1))`; requires `y > 0`.
    #[inline]
    pub fn slope(&self, y: T) -> T {
        self.k - self.wealth_shift(y)
    }

    /// `phi''(y) = y^((2-gamma)/(gamma-1)) / (1 - gamma)`; requires `y > 0`.
    #[inline]
    pub fn curvature(&self, y: T) -> T {
        let g = self.gamma;
        y.powf((lit::<T>(2.0) - g) / (g - T::one())) / (T::one() - g)
    }

    /// `y^(1/(gamma-1))`, i.e. `x + K` for the wealth `x` whose marginal
    /// utility `U'(x + K)` equals `y`.
    #[inline]
    pub fn wealth_shift(&self, y: T) -> T {
        y.powf(T::one() / (self.gamma - T::one()))
    }
}

/// `phi(y)` with a domain check.
pub fn phi<T: Scalar>(y: T, utility: &UtilityParams<T>) -> Result<T> {
    Obstacle::new(utility).evaluate(y).map(|e| e.value)
}

/// Dirichlet value at `y = y0`, `K^gamma / gamma`, for every `t`.
pub fn dual_boundary_value<T: Scalar>(utility: &UtilityParams<T>) -> T {
    utility.zero_wealth_value()
}

/// Dual of the separable no-stopping solution:
/// `(1-gamma)/gamma * exp((A - r) tau) * y^(gamma/(gamma-1))`, where `tau` is
/// time to the horizon.
pub fn merton_dual<T: Scalar>(y: T, time_to_go: T, utility: &UtilityParams<T>, growth: T, r: T) -> T {
    let g = utility.gamma;
    (T::one() - g) / g * ((growth - r) * time_to_go).exp() * y.powf(g / (g - T::one()))
}

/// Brute-force dual transform `max_i (V_i - x_i y)` of a sampled concave
/// function, refined by the vertex of the parabola through the best sample
/// and its two neighbours.
///
/// `y` may exceed the sampled secant slopes by at most one slope increment on
/// either end; beyond that the maximiser would lie outside the table.
pub fn legendre_transform<T: Scalar>(table: &[(T, T)], y: T) -> Result<T> {
    let n = table.len();
    if n < 3 {
        return Err(Error::Inconsistent(format!(
            "legendre table needs at least 3 samples, got {n}"
        )));
    }
    let mut slopes = Vec::with_capacity(n - 1);
    for (i, w) in table.windows(2).enumerate() {
        let dx = w[1].0 - w[0].0;
        if !(dx > T::zero()) {
            return Err(Error::Inconsistent(format!(
                "table abscissae not strictly increasing at index {}",
                i + 1
            )));
        }
        slopes.push((w[1].1 - w[0].1) / dx);
    }
    for i in 1..slopes.len() {
        if !(slopes[i] < slopes[i - 1]) {
            return Err(Error::ConcavityViolated(i));
        }
    }
    let last = slopes.len() - 1;
    let upper = slopes[0] + (slopes[0] - slopes[1]);
    let lower = slopes[last] - (slopes[last - 1] - slopes[last]);
    if y > upper || y < lower {
        return Err(Error::ExtrapolationRefused(format!(
            "y = {:e} outside slope range [{:e}, {:e}]",
            to_f64(y),
            to_f64(lower),
            to_f64(upper)
        )));
    }

    let objective = |i: usize| table[i].1 - table[i].0 * y;
    let (best, best_val) = (0..n)
        .map(|i| (i, objective(i)))
        .fold((0, T::neg_infinity()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });

    if best == 0 || best == n - 1 {
        return Ok(best_val);
    }
    let (x0, x1, x2) = (table[best - 1].0, table[best].0, table[best + 1].0);
    let (f0, f1, f2) = (objective(best - 1), best_val, objective(best + 1));
    let d01 = (f1 - f0) / (x1 - x0);
    let d12 = (f2 - f1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if !(curv < T::zero()) {
        return Ok(best_val);
    }
    let two = lit::<T>(2.0);
    let xv = (x0 + x1) / two - d01 / (two * curv);
    let vertex = f0 + d01 * (xv - x0) + curv * (xv - x0) * (xv - x1);
    Ok(if vertex.is_finite() { vertex.max(best_val) } else { best_val })
}

/// `u - y u_y - (K - u_y)^gamma / gamma`; nonnegative when the dual surface
/// satisfies the original (unsimplified) constraint.
pub fn constraint_residual<T: Scalar>(u: T, du_dy: T, y: T, utility: &UtilityParams<T>) -> Result<T> {
    if du_dy >= utility.k {
        return Err(Error::ConstraintUndefined {
            du_dy: to_f64(du_dy),
            k: to_f64(utility.k),
        });
    }
    Ok(u - y * du_dy - (utility.k - du_dy).powf(utility.gamma) / utility.gamma)
}

/// `(K - y^(1/(gamma-1))) - u_y`; nonnegative everywhere, zero where the
/// surface touches the obstacle.
pub fn marginal_gap<T: Scalar>(du_dy: T, y: T, utility: &UtilityParams<T>) -> T {
    Obstacle::new(utility).slope(y) - du_dy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn half() -> UtilityParams<f64> {
        UtilityParams::new(0.5, 1.0).unwrap()
    }

    #[test]
    fn phi_examples() {
        let u = half();
        assert_relative_eq!(phi(1.0, &u).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(phi(0.5, &u).unwrap(), 2.5, max_relative = 1e-15);
        assert_relative_eq!(phi(0.774597, &u).unwrap(), 2.065591, epsilon = 1e-6);
        assert!(matches!(phi(0.0, &u), Err(Error::Domain(_))));
        assert!(matches!(phi(-1.0, &u), Err(Error::Domain(_))));
    }

    #[test]
    fn boundary_value_examples() {
        assert_eq!(dual_boundary_value(&half()), 2.0);
        let u4 = UtilityParams::new(0.5, 4.0).unwrap();
        assert_relative_eq!(dual_boundary_value(&u4), 4.0, max_relative = 1e-15);
    }

    #[test]
    fn boundary_value_matches_obstacle_at_y0() {
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let u = UtilityParams::new(0.05 + 0.9 * next(), 0.1 + 5.0 * next()).unwrap();
            let y0 = u.dual_upper();
            let lhs = dual_boundary_value(&u);
            assert_relative_eq!(phi(y0, &u).unwrap(), lhs, max_relative = 1e-14);
        }
    }

    #[test]
    fn obstacle_derivatives_match_finite_differences() {
        let ob = Obstacle::new(&UtilityParams::new(0.3, 2.0).unwrap());
        for &y in &[0.05, 0.2, 0.5, 0.6] {
            let h = 1e-4 * y;
            let d1 = (ob.value(y + h) - ob.value(y - h)) / (2.0 * h);
            let d2 = (ob.value(y + h) - 2.0 * ob.value(y) + ob.value(y - h)) / (h * h);
            assert_relative_eq!(ob.slope(y), d1, max_relative = 1e-6, epsilon = 1e-9);
            assert_relative_eq!(ob.curvature(y), d2, max_relative = 1e-5);
        }
    }

    #[test]
    fn obstacle_wealth_map_is_decreasing_and_vanishes_at_y0() {
        let u = UtilityParams::new(0.4, 1.5).unwrap();
        let ob = Obstacle::new(&u);
        let y0 = u.dual_upper();
        assert_relative_eq!(-ob.slope(y0), 0.0, epsilon = 1e-14);
        let ys: Vec<f64> = (1..=100).map(|i| y0 * i as f64 / 100.0).collect();
        let xs: Vec<f64> = ys.iter().map(|&y| -ob.slope(y)).collect();
        assert!(xs.windows(2).all(|w| w[1] < w[0]));
        assert!(xs[..99].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn legendre_examples() {
        let table: Vec<(f64, f64)> = (0..=5000)
            .map(|i| {
                let x = i as f64 * 0.01;
                (x, (x + 1.0).sqrt() / 0.5)
            })
            .collect();
        assert_relative_eq!(legendre_transform(&table, 1.0).unwrap(), 2.0, max_relative = 1e-9);
        assert_relative_eq!(legendre_transform(&table, 0.5).unwrap(), 2.5, max_relative = 1e-9);

        let linear: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            legendre_transform(&linear, 1.0),
            Err(Error::ConcavityViolated(_))
        ));
        assert!(matches!(
            legendre_transform(&table, 3.0),
            Err(Error::ExtrapolationRefused(_))
        ));
        assert!(matches!(
            legendre_transform(&table, 0.01),
            Err(Error::ExtrapolationRefused(_))
        ));
    }

    #[test]
    fn legendre_of_terminal_value_reproduces_obstacle() {
        let u = half();
        let y0 = u.dual_upper();
        // geometric sampling of x + K up to x = 400 covers y down to 0.05
        let table: Vec<(f64, f64)> = (0..=40000)
            .map(|i| {
                let s = (401.0f64).powf(i as f64 / 40000.0);
                let x = s - 1.0;
                (x, u.stop_reward(x))
            })
            .collect();
        for i in 0..=50 {
            let y = y0 * (0.1 + 0.9 * i as f64 / 50.0);
            let v = legendre_transform(&table, y).unwrap();
            assert_relative_eq!(v, phi(y, &u).unwrap(), max_relative = 1e-6);
        }
    }

    #[test]
    fn residual_examples() {
        let u = half();
        assert_relative_eq!(constraint_residual(2.5, -3.0, 0.5, &u).unwrap(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(constraint_residual(3.0, -3.0, 0.5, &u).unwrap(), 0.5, epsilon = 1e-14);
        assert_relative_eq!(constraint_residual(2.0, 0.0, 0.5, &u).unwrap(), 0.0, epsilon = 1e-14);
        assert!(matches!(
            constraint_residual(2.0, 1.0, 0.5, &u),
            Err(Error::ConstraintUndefined { .. })
        ));
    }

    #[test]
    fn marginal_gap_examples() {
        let u = half();
        assert_relative_eq!(marginal_gap(-3.0, 0.5, &u), 0.0, epsilon = 1e-14);
        assert_relative_eq!(marginal_gap(-4.0, 0.5, &u), 1.0, epsilon = 1e-14);
        assert_relative_eq!(marginal_gap(0.0, 1.0, &u), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn merton_dual_solves_linear_equation() {
        // -v_t - a2/2 y^2 v_yy + r v = 0 by central differences
        let u = UtilityParams::new(0.5, 1.0).unwrap();
        let (a2, r) = (0.08, 0.05);
        let growth = a2 * 0.5 / (2.0 * 0.25);
        let v = |y: f64, t: f64| merton_dual(y, 1.0 - t, &u, growth, r);
        for &(y, t) in &[(0.01, 0.1), (0.3, 0.5), (0.9, 0.9)] {
            let (hy, ht) = (1e-3 * y, 1e-4);
            let vt = (v(y, t + ht) - v(y, t - ht)) / (2.0 * ht);
            let vyy = (v(y + hy, t) - 2.0 * v(y, t) + v(y - hy, t)) / (hy * hy);
            let res = -vt - 0.5 * a2 * y * y * vyy + r * v(y, t);
            assert!(res.abs() <= 1e-6 * v(y, t), "residual {res} at y={y}");
        }
    }

    proptest! {
        #[test]
        fn obstacle_is_strictly_convex(gamma in 0.05f64..0.95, k in 0.1f64..5.0, lo in 0.001f64..0.5) {
            let u = UtilityParams::new(gamma, k).unwrap();
            let ob = Obstacle::new(&u);
            let y0 = u.dual_upper();
            let ys: Vec<f64> = (0..=64).map(|i| y0 * (lo + (1.0 - lo) * i as f64 / 64.0)).collect();
            for w in ys.windows(3) {
                let s0 = (ob.value(w[1]) - ob.value(w[0])) / (w[1] - w[0]);
                let s1 = (ob.value(w[2]) - ob.value(w[1])) / (w[2] - w[1]);
                prop_assert!(s1 > s0);
            }
        }
    }
}
