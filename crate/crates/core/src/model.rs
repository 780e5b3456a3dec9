//! Problem instance, market constants and the parameter regime that decides
//! whether a nontrivial stopping boundary exists.
//!
//! The investor holds wealth `X` split between a riskless asset earning `r`
//! and `n` risky assets with excess drift `mu` and covariance `Sigma`, and
//! receives `U(X_tau + K) = (X_tau + K)^gamma / gamma` at a stopping time
//! `tau <= T`. Everything the solvers need from the market collapses into the
//! squared market price of risk `a2 = mu' Sigma^-1 mu`.

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// Riskless rate, excess drifts and return covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams<T> {
    pub r: T,
    pub mu: Vec<T>,
    /// Covariance matrix, row-major, `n x n`.
    pub sigma: Vec<Vec<T>>,
}

impl<T: Scalar> MarketParams<T> {
    pub fn new(r: T, mu: Vec<T>, covariance: Vec<Vec<T>>) -> Result<Self> {
        let market = Self {
            r,
            mu,
            sigma: covariance,
        };
        market.validate()?;
        Ok(market)
    }

    /// Builds the covariance from per-asset volatility vectors (one row per
    /// asset): `Sigma_ij = sigma_i . sigma_j`.
    pub fn from_volatility(r: T, mu: Vec<T>, volatility: &[Vec<T>]) -> Result<Self> {
        let n = volatility.len();
        if n == 0 {
            return Err(Error::Shape("volatility matrix has no rows".into()));
        }
        let width = volatility[0].len();
        if volatility.iter().any(|row| row.len() != width) {
            return Err(Error::Shape("volatility rows have unequal length".into()));
        }
        let covariance = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        volatility[i]
                            .iter()
                            .zip(&volatility[j])
                            .map(|(&a, &b)| a * b)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Self::new(r, mu, covariance)
    }

    pub fn dimension(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > T::zero()) || !self.r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "interest rate must be positive, got {}",
                self.r
            )));
        }
        if self.mu.is_empty() {
            return Err(Error::Shape("at least one risky asset required".into()));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("non-finite excess drift".into()));
        }
        compute_a2(&self.mu, &self.sigma).map(|_| ())
    }
}

/// Shifted CRRA utility `(x + K)^gamma / gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParams<T> {
    pub gamma: T,
    pub k: T,
}

impl<T: Scalar> UtilityParams<T> {
    pub fn new(gamma: T, k: T) -> Result<Self> {
        let utility = Self { gamma, k };
        utility.validate()?;
        Ok(utility)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > T::zero() && self.gamma < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "gamma out of (0,1): {}",
                self.gamma
            )));
        }
        if !(self.k > T::zero()) || !self.k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "K must be positive, got {}",
                self.k
            )));
        }
        Ok(())
    }

    /// `U(x + K)`, the reward collected when stopping with wealth `x`.
    #[inline]
    pub fn stop_reward(&self, x: T) -> T {
        (x + self.k).powf(self.gamma) / self.gamma
    }

    /// `K^gamma / gamma`, the value at zero wealth.
    #[inline]
    pub fn zero_wealth_value(&self) -> T {
        self.k.powf(self.gamma) / self.gamma
    }

    /// Upper end of the dual domain, `K^(gamma - 1)`.
    #[inline]
    pub fn dual_upper(&self) -> T {
        self.k.powf(self.gamma - T::one())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T> {
    pub market: MarketParams<T>,
    pub utility: UtilityParams<T>,
    /// Investment horizon `T` in years.
    pub horizon: T,
}

impl<T: Scalar> ProblemSpec<T> {
    pub fn new(market: MarketParams<T>, utility: UtilityParams<T>, horizon: T) -> Result<Self> {
        let spec = Self {
            market,
            utility,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.utility.validate()?;
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn regime(&self) -> Result<Regime> {
        classify_regime(self)
    }

    pub fn constants(&self) -> Result<DerivedConstants<T>> {
        derived_constants(self)
    }
}

/// Which of the three parameter regimes the instance falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Stopping at once is optimal for every wealth level.
    StopImmediately,
    /// Never stop before the horizon; the value solves the obstacle-free equation.
    NeverStop,
    /// A nontrivial stopping boundary separates the two behaviours.
    FreeBoundary,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::StopImmediately => "stop_immediately",
            Regime::NeverStop => "never_stop",
            Regime::FreeBoundary => "free_boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants<T> {
    /// Squared market price of risk `mu' Sigma^-1 mu`.
    pub a2: T,
    /// Growth constant of the dual upper bound, `a2 gamma / (2 (1 - gamma)^2)`.
    pub growth: T,
    /// Exponent of the separable no-stopping primal solution,
    /// `r (1 - gamma) - a2 gamma / (2 (1 - gamma))`.
    pub beta: T,
    /// Growth-optimal direction `Sigma^-1 mu`.
    pub kelly: Vec<T>,
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky<T: Scalar>(matrix: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let n = matrix.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let partial: T = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            let s = matrix[i][j] - partial;
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return Err(Error::DegenerateCovariance(format!(
                        "non-positive pivot {:e} at row {i}",
                        to_f64(s)
                    )));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L L' w = b` given the Cholesky factor `L`.
pub(crate) fn cholesky_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let n = l.len();
    let mut w = b.to_vec();
    for i in 0..n {
        let s: T = (0..i).map(|k| l[i][k] * w[k]).sum();
        w[i] = (w[i] - s) / l[i][i];
    }
    for i in (0..n).rev() {
        let s: T = (i + 1..n).map(|k| l[k][i] * w[k]).sum();
        w[i] = (w[i] - s) / l[i][i];
    }
    w
}

/// Returns `(a2, Sigma^-1 mu)` via a Cholesky solve of `Sigma w = mu`.
pub fn compute_a2<T: Scalar>(mu: &[T], sigma: &[Vec<T>]) -> Result<(T, Vec<T>)> {
    let n = mu.len();
    if n == 0 || sigma.len() != n || sigma.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!(
            "mu has length {n} but Sigma is {}x{}",
            sigma.len(),
            sigma.first().map_or(0, Vec::len)
        )));
    }
    let scale = sigma
        .iter()
        .flatten()
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    let sym_tol = lit::<T>(1e3) * T::epsilon() * scale.max(T::one());
    for i in 0..n {
        for j in 0..i {
            if (sigma[i][j] - sigma[j][i]).abs() > sym_tol {
                return Err(Error::DegenerateCovariance(format!(
                    "covariance not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let l = cholesky(sigma)?;
    let kelly = cholesky_solve(&l, mu);
    let a2 = mu.iter().zip(&kelly).map(|(&m, &w)| m * w).sum::<T>();
    Ok((a2.max(T::zero()), kelly))
}

/// Regime decided by `c = a2 gamma / (2 (1 - gamma)) - r`: stop at once when
/// `c <= -r gamma`, never stop when `c >= 0`, free boundary in between.
pub fn classify<T: Scalar>(a2: T, gamma: T, r: T) -> Regime {
    let two = lit::<T>(2.0);
    let c = a2 * gamma / (two * (T::one() - gamma)) - r;
    if c <= -r * gamma {
        Regime::StopImmediately
    } else if c >= T::zero() {
        Regime::NeverStop
    } else {
        Regime::FreeBoundary
    }
}

pub fn classify_regime<T: Scalar>(spec: &ProblemSpec<T>) -> Result<Regime> {
    spec.validate()?;
    let (a2, _) = compute_a2(&spec.market.mu, &spec.market.sigma)?;
    Ok(classify(a2, spec.utility.gamma, spec.market.r))
}

pub fn derived_constants<T: Scalar>(spec: &ProblemSpec<T>) -> Result<DerivedConstants<T>> {
    spec.validate()?;
    let (a2, kelly) = compute_a2(&spec.market.mu, &spec.market.sigma)?;
    let gamma = spec.utility.gamma;
    let r = spec.market.r;
    let one_minus = T::one() - gamma;
    let two = lit::<T>(2.0);
    Ok(DerivedConstants {
        a2,
        growth: a2 * gamma / (two * one_minus * one_minus),
        beta: r * one_minus - a2 * gamma / (two * one_minus),
        kelly,
    })
}

/// Value when stopping at once is optimal: `(x + K)^gamma / gamma`.
pub fn trivial_value_stop<T: Scalar>(x: T, spec: &ProblemSpec<T>) -> Result<T> {
    if !(x >= T::zero()) {
        return Err(Error::Domain(format!("wealth must be nonnegative, got {x}")));
    }
    Ok(spec.utility.stop_reward(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_spec(a2: f64) -> ProblemSpec<f64> {
        // mu^2 / s2 = a2 with s2 = 0.18
        let s2 = 0.18;
        let mu = (a2 * s2).sqrt();
        ProblemSpec::new(
            MarketParams::new(0.05, vec![mu], vec![vec![s2]]).unwrap(),
            UtilityParams::new(0.5, 1.0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn a2_scalar_and_identity() {
        let (a2, kelly) = compute_a2(&[0.12], &[vec![0.18]]).unwrap();
        assert_relative_eq!(a2, 0.12 * 0.12 / 0.18, max_relative = 1e-14);
        assert_relative_eq!(a2, 0.08, max_relative = 1e-14);
        assert_relative_eq!(kelly[0], 2.0 / 3.0, max_relative = 1e-14);

        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (a2, _) = compute_a2(&[0.1, 0.2], &id).unwrap();
        assert_relative_eq!(a2, 0.05, max_relative = 1e-14);

        let spd = vec![vec![0.04, 0.01], vec![0.01, 0.09]];
        let (a2, kelly) = compute_a2(&[0.0, 0.0], &spd).unwrap();
        assert_eq!(a2, 0.0);
        assert!(kelly.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn a2_errors() {
        assert!(matches!(
            compute_a2(&[0.1, 0.2], &[vec![1.0]]),
            Err(Error::Shape(_))
        ));
        let singular = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            compute_a2(&[0.1, 0.2], &singular),
            Err(Error::DegenerateCovariance(_))
        ));
        let indefinite = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            compute_a2(&[0.1, 0.2], &indefinite),
            Err(Error::DegenerateCovariance(_))
        ));
    }

    #[test]
    fn regimes_for_specimen_a2() {
        assert_eq!(classify(0.02, 0.5, 0.05), Regime::StopImmediately);
        assert_eq!(classify(0.12, 0.5, 0.05), Regime::NeverStop);
        assert_eq!(classify(0.08, 0.5, 0.05), Regime::FreeBoundary);
        assert_eq!(scalar_spec(0.08).regime().unwrap(), Regime::FreeBoundary);
        // zero market price of risk: c = -r <= -r gamma
        assert_eq!(classify(0.0, 0.5, 0.05), Regime::StopImmediately);
    }

    #[test]
    fn regime_ties_go_to_trivial_regimes() {
        // gamma = 0.5 gives c = a2/2 - r; c = 0 at a2 = 0.1, c = -0.025 at a2 = 0.05
        assert_eq!(classify(0.1, 0.5, 0.05), Regime::NeverStop);
        assert_eq!(classify(0.05, 0.5, 0.05), Regime::StopImmediately);
    }

    #[test]
    fn derived_constants_reference() {
        let c = scalar_spec(0.08).constants().unwrap();
        assert_relative_eq!(c.a2, 0.08, max_relative = 1e-13);
        assert_relative_eq!(c.growth, 0.08, max_relative = 1e-13);
        assert_relative_eq!(c.beta, -0.015, max_relative = 1e-12);

        let zero = ProblemSpec::new(
            MarketParams::new(0.05, vec![0.0], vec![vec![0.18]]).unwrap(),
            UtilityParams::new(0.5, 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        let c = zero.constants().unwrap();
        assert_eq!(c.growth, 0.0);
        assert_relative_eq!(c.beta, 0.05 * 0.5, max_relative = 1e-15);
    }

    #[test]
    fn stop_value() {
        let spec = scalar_spec(0.02);
        assert_relative_eq!(trivial_value_stop(0.0, &spec).unwrap(), 2.0);
        assert_relative_eq!(trivial_value_stop(3.0, &spec).unwrap(), 4.0);
        assert_relative_eq!(trivial_value_stop(8.0, &spec).unwrap(), 6.0);
        assert!(matches!(
            trivial_value_stop(-1.0, &spec),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn validation() {
        assert!(UtilityParams::new(1.5, 1.0).is_err());
        assert!(UtilityParams::new(0.5, 0.0).is_err());
        assert!(MarketParams::new(0.0, vec![0.1], vec![vec![0.1]]).is_err());
        assert!(MarketParams::<f64>::new(0.05, vec![], vec![]).is_err());
    }

    #[test]
    fn volatility_constructor_forms_gram_matrix() {
        let vol = vec![vec![0.2, 0.0], vec![0.1, 0.3]];
        let m = MarketParams::from_volatility(0.05, vec![0.1, 0.1], &vol).unwrap();
        assert_relative_eq!(m.sigma[0][0], 0.04);
        assert_relative_eq!(m.sigma[0][1], 0.02);
        assert_relative_eq!(m.sigma[1][0], 0.02);
        assert_relative_eq!(m.sigma[1][1], 0.1);
    }

    #[test]
    fn generic_over_f32() {
        let (a2, _) = compute_a2(&[0.12f32], &[vec![0.18f32]]).unwrap();
        assert!((a2 - 0.08).abs() < 1e-6);
        assert_eq!(classify(0.08f32, 0.5, 0.05), Regime::FreeBoundary);
    }
}
