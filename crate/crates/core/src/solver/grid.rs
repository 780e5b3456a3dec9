use crate::dual::DualDomain;
use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

/// Smallest spatial and temporal resolution accepted by [`build_grid`].
pub const MIN_INTERVALS: usize = 50;

/// Uniform grid in `z = ln y` on `[ln y_min, ln y0]` times a uniform time grid
/// on `[0, T]`. Endpoints are placed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrid<T> {
    pub domain: DualDomain<T>,
    pub z: Vec<T>,
    pub y: Vec<T>,
    pub t: Vec<T>,
    pub dz: T,
    pub dt: T,
}

impl<T: Scalar> DualGrid<T> {
    /// Grid of any size (`m >= 2`, `n >= 1`). Production runs go through
    /// [`build_grid`], which enforces the minimum resolution.
    pub fn uniform(domain: DualDomain<T>, m: usize, n: usize) -> Result<Self> {
        if m < 2 || n < 1 {
            return Err(Error::Config(format!(
                "grid needs at least 2 space and 1 time interval, got M={m}, N={n}"
            )));
        }
        if !(domain.y_min > T::zero() && domain.y_min < domain.y0) {
            return Err(Error::Config("y_min must lie in (0, y0)".into()));
        }
        let z_lo = domain.y_min.ln();
        let z_hi = domain.y0.ln();
        let dz = (z_hi - z_lo) / count(m);
        let mut z: Vec<T> = (0..=m).map(|j| z_lo + dz * count(j)).collect();
        z[m] = z_hi;
        let mut y: Vec<T> = z.iter().map(|v| v.exp()).collect();
        y[0] = domain.y_min;
        y[m] = domain.y0;

        let dt = domain.horizon / count(n);
        let mut t: Vec<T> = (0..=n).map(|k| dt * count(k)).collect();
        t[n] = domain.horizon;
        Ok(Self {
            domain,
            z,
            y,
            t,
            dz,
            dt,
        })
    }

    /// Number of space intervals `M`.
    pub fn m(&self) -> usize {
        self.z.len() - 1
    }

    /// Number of time intervals `N`.
    pub fn n(&self) -> usize {
        self.t.len() - 1
    }

    /// Width in `y` of the cell to the left of node `j` (right of node 0).
    pub fn cell_width(&self, j: usize) -> T {
        let j = j.clamp(1, self.m());
        self.y[j] - self.y[j - 1]
    }

    /// Index of the interval `[y_j, y_{j+1}]` containing `y` (clamped).
    pub fn locate_y(&self, y: T) -> usize {
        let j = self.y.partition_point(|&v| v <= y);
        j.saturating_sub(1).min(self.m() - 1)
    }
}

pub fn build_grid<T: Scalar>(domain: DualDomain<T>, m: usize, n: usize) -> Result<DualGrid<T>> {
    if m < MIN_INTERVALS || n < MIN_INTERVALS {
        return Err(Error::Config(format!(
            "grid too coarse: M={m}, N={n} (minimum {MIN_INTERVALS})"
        )));
    }
    DualGrid::uniform(domain, m, n)
}
