//! Finite-horizon optimal investment with discretionary stopping.
//!
//! An investor with shifted CRRA utility `(x + K)^gamma / gamma` trades a
//! riskless asset and `n` risky assets and may stop at any time before the
//! horizon. The fully nonlinear HJB obstacle problem for the value `V(x, t)`
//! is attacked through its Legendre dual `u(y, t)`, which satisfies a
//! *linear* parabolic obstacle problem. The crate
//!
//! * classifies the parameter regime ([`model`]),
//! * solves the dual obstacle problem on a log grid ([`solver`]),
//! * extracts the stopping boundary in dual and wealth coordinates
//!   ([`boundary`]),
//! * rebuilds the primal value and optimal portfolio ([`primal`]),
//! * cross-checks everything by simulating the controlled wealth
//!   ([`montecarlo`]),
//! * and drives batch runs from a JSON config ([`cli`]).
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix it to `f64`, which is what the default tolerances assume.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boundary;
pub mod cli;
pub mod dual;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod primal;
pub mod scalar;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use model::Regime;
pub use scalar::Scalar;

pub type MarketParams = model::MarketParams<f64>;
pub type UtilityParams = model::UtilityParams<f64>;
pub type ProblemSpec = model::ProblemSpec<f64>;
pub type DerivedConstants = model::DerivedConstants<f64>;
pub type DualDomain = dual::DualDomain<f64>;
pub type DualGrid = solver::DualGrid<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type DualSolution = solver::DualSolution<f64>;
pub type FreeBoundaryCurve = boundary::FreeBoundaryCurve<f64>;
pub type PrimalSlice = primal::PrimalSlice<f64>;
pub type PolicySurface = primal::PolicySurface<f64>;

/// Reference instance used throughout the tests and the README:
/// `r = 0.05, gamma = 0.5, K = 1, mu = (0.12), Sigma = ((0.18)), T = 1`.
pub fn reference_problem() -> ProblemSpec {
    ProblemSpec::new(
        MarketParams::new(0.05, vec![0.12], vec![vec![0.18]]).expect("valid market"),
        UtilityParams::new(0.5, 1.0).expect("valid utility"),
        1.0,
    )
    .expect("valid problem")
}
