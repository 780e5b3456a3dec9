use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("non-monotone scheme: {0}")]
    NonMonotoneScheme(String),

    #[error("singular tridiagonal system at row {row}")]
    SingularSystem { row: usize },

    #[error("PSOR non-convergence after {iterations} iterations (last update {residual:e})")]
    PsorNonConvergence { iterations: usize, residual: f64 },

    #[error("concavity violated at table index {0}")]
    ConcavityViolated(usize),

    #[error("extrapolation refused: {0}")]
    ExtrapolationRefused(String),

    #[error("constraint term undefined: du/dy = {du_dy} >= K = {k}")]
    ConstraintUndefined { du_dy: f64, k: f64 },

    #[error("no exercise region at t = {0}")]
    NoExerciseRegion(f64),

    #[error("contact set not connected at t = {0}")]
    ContactNotConnected(f64),

    #[error("reconstruction failed: non-convex dual slice at node {0}")]
    NonConvexSlice(usize),

    #[error("convexity violated at node: d2u/dy2 = {0}")]
    ConvexityViolated(f64),

    #[error("inconsistent input: {0}")]
    Inconsistent(String),
}
