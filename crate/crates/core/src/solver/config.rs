use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Time stepping and complementarity solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Time weighting: 1 is implicit Euler, 0.5 is Crank-Nicolson.
    pub theta: T,
    /// Number of fully implicit steps taken first, starting from the horizon.
    pub rannacher_steps: usize,
    pub psor_omega: T,
    /// Stopping tolerance on the max-norm of successive PSOR iterates.
    pub psor_tol: T,
    pub psor_max_iter: usize,
    /// A node is in contact when `u - phi <= contact_tol`.
    pub contact_tol: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        let psor_tol = lit::<T>(1e-9);
        Self {
            theta: lit(0.5),
            rannacher_steps: 4,
            psor_omega: lit(1.5),
            psor_tol,
            psor_max_iter: 10_000,
            contact_tol: default_contact_tol(psor_tol),
        }
    }
}

/// `max(1e-8, 10 psor_tol)`.
pub fn default_contact_tol<T: Scalar>(psor_tol: T) -> T {
    lit::<T>(1e-8).max(lit::<T>(10.0) * psor_tol)
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= lit(0.5) && self.theta <= T::one()) {
            return Err(Error::Config(format!("theta must lie in [0.5, 1], got {}", self.theta)));
        }
        if !(self.psor_omega > T::one() && self.psor_omega < lit(2.0)) {
            return Err(Error::Config(format!(
                "psor_omega must lie in (1, 2), got {}",
                self.psor_omega
            )));
        }
        if !(self.psor_tol > T::zero()) {
            return Err(Error::Config("psor_tol must be positive".into()));
        }
        if self.psor_max_iter == 0 {
            return Err(Error::Config("psor_max_iter must be positive".into()));
        }
        if !(self.contact_tol > T::zero()) {
            return Err(Error::Config("contact_tol must be positive".into()));
        }
        Ok(())
    }

    /// Theta of the `index`-th backward step, counted from the horizon.
    pub fn theta_for_step(&self, index: usize) -> T {
        if index < self.rannacher_steps {
            T::one()
        } else {
            self.theta
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SolverConfig::<f64>::default();
        assert_eq!(c.contact_tol, 1e-8);
        assert!(c.validate().is_ok());
        assert_eq!(c.theta_for_step(0), 1.0);
        assert_eq!(c.theta_for_step(3), 1.0);
        assert_eq!(c.theta_for_step(4), 0.5);
        assert_eq!(default_contact_tol(1e-8), 1e-7);
    }

    #[test]
    fn rejects_bad_values() {
        let base = SolverConfig::<f64>::default();
        assert!(SolverConfig { theta: 0.3, ..base }.validate().is_err());
        assert!(SolverConfig { psor_omega: 2.0, ..base }.validate().is_err());
        assert!(SolverConfig { psor_tol: 0.0, ..base }.validate().is_err());
        assert!(SolverConfig { psor_max_iter: 0, ..base }.validate().is_err());
    }
}
