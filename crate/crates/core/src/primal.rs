//! Primal value and optimal portfolio recovered from the dual surface.
//!
//! With `x = -u_y` the inverse transform gives `V(x, t) = u - y u_y` and the
//! optimal holding `pi* = Sigma^-1 mu * y u_yy`. Derivatives are taken on the
//! gap `u - phi` in log coordinates and the exact derivatives of `phi` are
//! added back, so contact nodes reproduce the obstacle identities to
//! rounding. Stencils never straddle the contact/continuation transition.

use crate::boundary::{g_terminal, FreeBoundaryCurve};
use crate::dual::{constraint_residual, legendre_transform, Obstacle};
use crate::error::{Error, Result};
use crate::model::{Regime, UtilityParams};
use crate::scalar::{count, lit, to_f64, Scalar};
use crate::solver::DualSolution;

/// `u_y` and `u_yy` on every node of one time row.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDerivatives<T> {
    pub du: Vec<T>,
    pub d2u: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stencil {
    Central,
    Forward,
    Backward,
}

fn pick_stencil(same: impl Fn(usize) -> bool, j: usize, m: usize) -> Stencil {
    let run = |range: std::ops::RangeInclusive<usize>| range.into_iter().all(&same);
    if j >= 1 && j < m && same(j - 1) && same(j + 1) {
        Stencil::Central
    } else if j + 3 <= m && run(j + 1..=j + 3) {
        Stencil::Forward
    } else if j >= 3 && run(j - 3..=j - 1) {
        Stencil::Backward
    } else if j == 0 {
        Stencil::Forward
    } else if j == m {
        Stencil::Backward
    } else {
        Stencil::Central
    }
}

/// First and second `z`-derivatives of `f` at `j`.
fn z_derivatives<T: Scalar>(f: &[T], j: usize, dz: T, stencil: Stencil) -> (T, T) {
    let two = lit::<T>(2.0);
    let (three, four, five) = (lit::<T>(3.0), lit::<T>(4.0), lit::<T>(5.0));
    let dz2 = dz * dz;
    match stencil {
        Stencil::Central => (
            (f[j + 1] - f[j - 1]) / (two * dz),
            (f[j + 1] - two * f[j] + f[j - 1]) / dz2,
        ),
        Stencil::Forward => (
            (-three * f[j] + four * f[j + 1] - f[j + 2]) / (two * dz),
            (two * f[j] - five * f[j + 1] + four * f[j + 2] - f[j + 3]) / dz2,
        ),
        Stencil::Backward => (
            (three * f[j] - four * f[j - 1] + f[j - 2]) / (two * dz),
            (two * f[j] - five * f[j - 1] + four * f[j - 2] - f[j - 3]) / dz2,
        ),
    }
}

/// Dual derivatives at time row `k`.
pub fn dual_derivatives<T: Scalar>(sol: &DualSolution<T>, k: usize) -> DualDerivatives<T> {
    let m = sol.grid.m();
    let ob = Obstacle::new(&sol.spec.utility);
    let gap: Vec<T> = (0..=m).map(|j| sol.gap(k, j)).collect();
    let mask = &sol.contact[k];
    let (mut du, mut d2u) = (Vec::with_capacity(m + 1), Vec::with_capacity(m + 1));
    for j in 0..=m {
        // the gap vanishes identically on contact, so only its one-sided limit
        // (zero, by smooth fit) is consistent there
        let (g1, g2) = if mask[j] {
            (T::zero(), T::zero())
        } else {
            let stencil = pick_stencil(|i| mask[i] == mask[j], j, m);
            z_derivatives(&gap, j, sol.grid.dz, stencil)
        };
        let y = sol.grid.y[j];
        du.push(ob.slope(y) + g1 / y);
        d2u.push(ob.curvature(y) + (g2 - g1) / (y * y));
    }
    DualDerivatives { du, d2u }
}

/// `Sigma^-1 mu * y * u_yy`.
pub fn optimal_portfolio<T: Scalar>(y: T, d2u_dy2: T, kelly: &[T]) -> Result<Vec<T>> {
    if !(y > T::zero()) {
        return Err(Error::Domain(format!("dual variable must be positive, got {y}")));
    }
    if !(d2u_dy2 > T::zero()) {
        return Err(Error::ConvexityViolated(to_f64(d2u_dy2)));
    }
    let s = y * d2u_dy2;
    Ok(kelly.iter().map(|&c| c * s).collect())
}

/// One reconstructed time slice, sorted by increasing wealth.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSlice<T> {
    pub t: T,
    pub x: Vec<T>,
    pub value: Vec<T>,
    /// Originating dual node of each wealth node (decreasing).
    pub y: Vec<T>,
    pub pi: Vec<Vec<T>>,
    /// Scalar exposure `y u_yy`; `pi = Sigma^-1 mu * exposure`.
    pub exposure: Vec<T>,
    pub d2u: Vec<T>,
    pub in_exercise: Vec<bool>,
}

impl<T: Scalar> PrimalSlice<T> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `u = V - x y` at every node, in the slice's (increasing-x) order.
    pub fn dual_values(&self) -> Vec<T> {
        self.value
            .iter()
            .zip(&self.x)
            .zip(&self.y)
            .map(|((&v, &x), &y)| v - x * y)
            .collect()
    }

    /// Index `i` with `x[i] <= x <= x[i+1]`, starting the search at `hint`.
    fn bracket(&self, x: T, hint: usize) -> usize {
        let last = self.x.len() - 2;
        let mut i = hint.min(last);
        if x >= self.x[i] {
            while i < last && x > self.x[i + 1] {
                i += 1;
            }
        } else {
            while i > 0 && x < self.x[i] {
                i -= 1;
            }
        }
        i
    }

    fn check_range(&self, x: T) -> Result<()> {
        if x > self.x[self.x.len() - 1] {
            return Err(Error::ExtrapolationRefused(format!(
                "wealth {:e} beyond the reconstructed range (max {:e}) at t = {:e}",
                to_f64(x),
                to_f64(self.x[self.x.len() - 1]),
                to_f64(self.t)
            )));
        }
        Ok(())
    }

    fn weight(&self, x: T, i: usize) -> T {
        ((x - self.x[i]) / (self.x[i + 1] - self.x[i])).max(T::zero()).min(T::one())
    }

    fn value_in(&self, x: T, utility: &UtilityParams<T>) -> Result<T> {
        self.check_range(x)?;
        let i = self.bracket(x, self.x.len() / 2);
        if self.in_exercise[i] && self.in_exercise[i + 1] {
            return Ok(utility.stop_reward(x));
        }
        let w = self.weight(x, i);
        Ok(self.value[i] + w * (self.value[i + 1] - self.value[i]))
    }

    fn exposure_in(&self, x: T, hint: &mut usize) -> T {
        let i = self.bracket(x, *hint);
        *hint = i;
        let w = self.weight(x, i);
        self.exposure[i] + w * (self.exposure[i + 1] - self.exposure[i])
    }
}

/// Primal slice at time row `k`.
pub fn reconstruct_slice<T: Scalar>(sol: &DualSolution<T>, k: usize) -> Result<PrimalSlice<T>> {
    let m = sol.grid.m();
    let DualDerivatives { du, d2u } = dual_derivatives(sol, k);
    let y = &sol.grid.y;
    for j in 0..m {
        if !(-du[j + 1] < -du[j]) {
            return Err(Error::NonConvexSlice(j + 1));
        }
    }
    let kelly = &sol.constants.kelly;
    let mut slice = PrimalSlice {
        t: sol.grid.t[k],
        x: Vec::with_capacity(m + 1),
        value: Vec::with_capacity(m + 1),
        y: Vec::with_capacity(m + 1),
        pi: Vec::with_capacity(m + 1),
        exposure: Vec::with_capacity(m + 1),
        d2u: Vec::with_capacity(m + 1),
        in_exercise: Vec::with_capacity(m + 1),
    };
    for j in (0..=m).rev() {
        let u = sol.u[k][j];
        slice.x.push(-du[j]);
        slice.value.push(u - y[j] * du[j]);
        slice.y.push(y[j]);
        slice.pi.push(optimal_portfolio(y[j], d2u[j], kelly)?);
        slice.exposure.push(y[j] * d2u[j]);
        slice.d2u.push(d2u[j]);
        slice.in_exercise.push(sol.contact[k][j]);
    }
    Ok(slice)
}

/// Sign certificate of the original dual constraint on one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCertificate {
    /// Minimum of `u - y u_y - (K - u_y)^gamma/gamma`, divided by
    /// `max(1, |u|)`, and its slice index.
    pub min_residual: f64,
    pub min_residual_at: usize,
    /// Minimum of `K - y^(1/(gamma-1)) - u_y`, divided by `max(1, |u|)`.
    pub min_gap: f64,
    pub min_gap_at: usize,
    /// Largest `|residual|` and `|gap|` on contact nodes (0 if none).
    pub max_contact_residual: f64,
    pub max_contact_gap: f64,
    /// Nodes where `u_y >= K` and the residual is undefined.
    pub undefined: Vec<usize>,
    /// Nodes where a quantity fell below `-tolerance * max(1, |u|)`.
    pub violations: Vec<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Evaluates the constraint residual and the marginal gap on every node of
/// `slice`. Both must be `>= -tol * max(1, |u|)`.
pub fn verify_constraint<T: Scalar>(
    utility: &UtilityParams<T>,
    slice: &PrimalSlice<T>,
    tol: f64,
) -> ConstraintCertificate {
    let ob = Obstacle::new(utility);
    let mut cert = ConstraintCertificate {
        min_residual: f64::INFINITY,
        min_residual_at: 0,
        min_gap: f64::INFINITY,
        min_gap_at: 0,
        max_contact_residual: 0.0,
        max_contact_gap: 0.0,
        undefined: Vec::new(),
        violations: Vec::new(),
        tolerance: tol,
        passed: true,
    };
    for i in 0..slice.len() {
        let y = slice.y[i];
        let du = -slice.x[i];
        let u = slice.value[i] - slice.x[i] * y;
        let scale = to_f64(u).abs().max(1.0);
        let gap = to_f64(ob.slope(y) - du);
        if gap / scale < cert.min_gap {
            cert.min_gap = gap / scale;
            cert.min_gap_at = i;
        }
        let mut bad = gap < -tol * scale;
        match constraint_residual(u, du, y, utility) {
            Ok(res) => {
                let res = to_f64(res);
                if res / scale < cert.min_residual {
                    cert.min_residual = res / scale;
                    cert.min_residual_at = i;
                }
                bad |= res < -tol * scale;
                if slice.in_exercise[i] {
                    cert.max_contact_residual = cert.max_contact_residual.max(res.abs());
                }
            }
            Err(_) => {
                cert.undefined.push(i);
                bad = true;
            }
        }
        if slice.in_exercise[i] {
            cert.max_contact_gap = cert.max_contact_gap.max(gap.abs());
        }
        if bad {
            cert.violations.push(i);
        }
    }
    cert.passed = cert.violations.is_empty();
    cert
}

/// Relative error of the brute-force transform of `slice` against the dual
/// values it came from, on nodes `skip .. len - skip` (slice order).
pub fn legendre_round_trip<T: Scalar>(slice: &PrimalSlice<T>, skip: usize) -> Result<(f64, usize)> {
    let table: Vec<(T, T)> = slice.x.iter().copied().zip(slice.value.iter().copied()).collect();
    let u = slice.dual_values();
    let mut worst = (0.0f64, skip);
    for i in skip..slice.len().saturating_sub(skip) {
        let v = legendre_transform(&table, slice.y[i])?;
        let err = to_f64((v - u[i]).abs() / u[i].abs());
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(worst)
}

/// All slices of a solution plus the stopping threshold, with interpolating
/// accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySurface<T> {
    pub slices: Vec<PrimalSlice<T>>,
    /// `g` at every time node (`g(T)` from the closed form); `None` when the
    /// investor only stops at zero wealth.
    pub boundary: Option<Vec<T>>,
    pub utility: UtilityParams<T>,
    pub kelly: Vec<T>,
    /// `mu' Sigma^-1 mu`.
    pub a2: T,
    pub horizon: T,
    pub dt: T,
}

impl<T: Scalar> PolicySurface<T> {
    /// Reconstructs every slice. A boundary curve is required in the
    /// free-boundary regime and ignored otherwise.
    pub fn assemble(sol: &DualSolution<T>, curve: Option<&FreeBoundaryCurve<T>>) -> Result<Self> {
        let n = sol.grid.n();
        let slices = (0..=n)
            .map(|k| reconstruct_slice(sol, k))
            .collect::<Result<Vec<_>>>()?;
        let boundary = match (sol.spec.regime()?, curve) {
            (Regime::FreeBoundary, Some(c)) => {
                if c.g.len() != n {
                    return Err(Error::Shape(format!(
                        "boundary has {} nodes, grid has {n} interior times",
                        c.g.len()
                    )));
                }
                let mut g = c.g.clone();
                g.push(g_terminal(&sol.spec)?);
                Some(g)
            }
            (Regime::FreeBoundary, None) => {
                return Err(Error::Inconsistent(
                    "free-boundary regime needs a boundary curve".into(),
                ))
            }
            _ => None,
        };
        Ok(Self {
            slices,
            boundary,
            utility: sol.spec.utility,
            kelly: sol.constants.kelly.clone(),
            a2: sol.constants.a2,
            horizon: sol.grid.domain.horizon,
            dt: sol.grid.dt,
        })
    }

    fn check_query(&self, x: T, t: T) -> Result<()> {
        if !(x >= T::zero()) {
            return Err(Error::Domain(format!("wealth must be nonnegative, got {x}")));
        }
        if !(t >= T::zero() && t <= self.horizon) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Row `k` and weight `w` with `t = (1 - w) t_k + w t_{k+1}`.
    fn time_bracket(&self, t: T) -> (usize, T) {
        let last = self.slices.len() - 2;
        let s = (t / self.dt).max(T::zero());
        // truncation is floor for s >= 0
        let k = s.to_usize().unwrap_or(last).min(last);
        (k, (s - count::<T>(k)).max(T::zero()).min(T::one()))
    }

    fn boundary_in(&self, k: usize, w: T) -> T {
        match &self.boundary {
            None => T::zero(),
            Some(g) => g[k] + w * (g[k + 1] - g[k]),
        }
    }

    /// Stopping threshold `g(t)`, linear between time nodes; 0 when there is
    /// no free boundary.
    pub fn boundary_at(&self, t: T) -> T {
        let (k, w) = self.time_bracket(t);
        self.boundary_in(k, w)
    }

    pub fn stop_at(&self, x: T, t: T) -> bool {
        x <= self.boundary_at(t)
    }

    pub fn value_at(&self, x: T, t: T) -> Result<T> {
        self.check_query(x, t)?;
        if t >= self.horizon || self.stop_at(x, t) {
            return Ok(self.utility.stop_reward(x));
        }
        let (k, w) = self.time_bracket(t);
        let a = self.slices[k].value_in(x, &self.utility)?;
        if w == T::zero() {
            return Ok(a);
        }
        let b = self.slices[k + 1].value_in(x, &self.utility)?;
        Ok(a + w * (b - a))
    }

    /// Scalar exposure `s` with `pi = Sigma^-1 mu * s`; zero in the stopping
    /// region. `hint` caches the wealth bracket between nearby queries.
    pub fn exposure_hinted(&self, x: T, t: T, hint: &mut usize) -> T {
        let (k, w) = self.time_bracket(t);
        if x <= self.boundary_in(k, w) || x <= T::zero() {
            return T::zero();
        }
        let a = self.slices[k].exposure_in(x, hint);
        if w == T::zero() {
            return a;
        }
        let b = self.slices[k + 1].exposure_in(x, hint);
        a + w * (b - a)
    }

    pub fn pi_at(&self, x: T, t: T) -> Result<Vec<T>> {
        self.check_query(x, t)?;
        let (k, _) = self.time_bracket(t);
        self.slices[k].check_range(x)?;
        self.slices[k + 1].check_range(x)?;
        let mut hint = self.slices[k].len() / 2;
        let s = self.exposure_hinted(x, t, &mut hint);
        Ok(self.kelly.iter().map(|&c| c * s).collect())
    }
}
