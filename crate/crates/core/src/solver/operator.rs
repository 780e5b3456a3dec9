use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

use super::grid::DualGrid;

/// Tridiagonal spatial operator
/// `L_z u = -(a2/2) u_zz + (a2/2) u_z + r u`, the dual operator
/// `-(a2/2) y^2 u_yy + r u` written in `z = ln y`.
///
/// Arrays have length `M + 1`; rows `0` and `M` carry Dirichlet data and are
/// left zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator<T> {
    pub sub: Vec<T>,
    pub diag: Vec<T>,
    pub sup: Vec<T>,
    /// Whether the first-order term fell back to one-sided differencing.
    pub upwind: bool,
}

impl<T: Scalar> DiscreteOperator<T> {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `(L_z u)_j` for an interior row.
    #[inline]
    pub fn apply_row(&self, u: &[T], j: usize) -> T {
        self.sub[j] * u[j - 1] + self.diag[j] * u[j] + self.sup[j] * u[j + 1]
    }
}

/// Central differences for both derivatives while the cell Peclet number
/// `dz/2` stays at or below one; upwind first-order term otherwise. The result
/// is checked to be an M-matrix row pattern.
pub fn assemble_operator<T: Scalar>(grid: &DualGrid<T>, a2: T, r: T) -> Result<DiscreteOperator<T>> {
    let m = grid.m();
    let dz = grid.dz;
    let two = lit::<T>(2.0);
    let diffusion = a2 / two;
    let advection = a2 / two;
    let upwind = advection * dz > two * diffusion;

    let (lo, mid, hi) = if upwind {
        (
            -diffusion / (dz * dz) - advection / dz,
            two * diffusion / (dz * dz) + advection / dz + r,
            -diffusion / (dz * dz),
        )
    } else {
        (
            -diffusion / (dz * dz) - advection / (two * dz),
            two * diffusion / (dz * dz) + r,
            -diffusion / (dz * dz) + advection / (two * dz),
        )
    };

    let mut op = DiscreteOperator {
        sub: vec![T::zero(); m + 1],
        diag: vec![T::zero(); m + 1],
        sup: vec![T::zero(); m + 1],
        upwind,
    };
    for j in 1..m {
        op.sub[j] = lo;
        op.diag[j] = mid;
        op.sup[j] = hi;
    }
    check_monotone(&op)?;
    Ok(op)
}

fn check_monotone<T: Scalar>(op: &DiscreteOperator<T>) -> Result<()> {
    let m = op.len() - 1;
    for j in 1..m {
        let (lo, mid, hi) = (op.sub[j], op.diag[j], op.sup[j]);
        if lo > T::zero() || hi > T::zero() {
            return Err(Error::NonMonotoneScheme(format!(
                "positive off-diagonal in row {j}: sub={:e}, sup={:e}",
                to_f64(lo),
                to_f64(hi)
            )));
        }
        if mid + lo + hi < T::zero() {
            return Err(Error::NonMonotoneScheme(format!(
                "row {j} not diagonally dominant"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::DualDomain;
    use approx::assert_relative_eq;

    fn grid_with_dz(dz: f64) -> DualGrid<f64> {
        let m = 100;
        let y_min = (-dz * m as f64).exp();
        DualGrid::uniform(
            DualDomain {
                y0: 1.0,
                y_min,
                horizon: 1.0,
            },
            m,
            10,
        )
        .unwrap()
    }

    #[test]
    fn coefficients_reference() {
        let g = grid_with_dz(0.01);
        let dz = g.dz;
        let op = assemble_operator(&g, 0.08, 0.05).unwrap();
        assert!(!op.upwind);
        let j = 50;
        assert_relative_eq!(op.diag[j], 0.08 / (dz * dz) + 0.05, max_relative = 1e-13);
        assert_relative_eq!(op.sub[j], -0.04 / (dz * dz) - 0.02 / dz, max_relative = 1e-13);
        assert_relative_eq!(op.sup[j], -0.04 / (dz * dz) + 0.02 / dz, max_relative = 1e-13);
        assert!(op.sub[j] <= 0.0 && op.sup[j] <= 0.0);
    }

    #[test]
    fn row_sums_equal_rate() {
        for &dz in &[0.01, 0.5, 2.5] {
            let g = grid_with_dz(dz);
            let op = assemble_operator(&g, 0.3, 0.07).unwrap();
            assert_eq!(op.upwind, dz > 2.0);
            for j in 1..g.m() {
                let s = op.sub[j] + op.diag[j] + op.sup[j];
                assert_relative_eq!(s, 0.07, epsilon = 1e-9 * op.diag[j]);
            }
        }
    }

    #[test]
    fn no_diffusion_reduces_to_rate() {
        let g = grid_with_dz(0.05);
        let op = assemble_operator(&g, 0.0, 0.05).unwrap();
        for j in 1..g.m() {
            assert_eq!(op.sub[j], 0.0);
            assert_eq!(op.sup[j], 0.0);
            assert_eq!(op.diag[j], 0.05);
        }
    }

    #[test]
    fn negative_rate_is_refused() {
        let g = grid_with_dz(0.05);
        assert!(matches!(
            assemble_operator(&g, 0.08, -1.0),
            Err(Error::NonMonotoneScheme(_))
        ));
    }
}
