use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform spatial grid `x_i = x_min + i dx`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid<T> {
    pub x_min: T,
    pub dx: T,
    pub n: usize,
}

impl<T: Real> UniformGrid<T> {
    pub fn new(x_min: T, dx: T, n: usize) -> Result<Self> {
        if !(dx > T::zero()) || n < 2 {
            return Err(Error::InvalidParameter("grid needs dx > 0 and at least two points".into()));
        }
        Ok(Self { x_min, dx, n })
    }

    /// Periodic grid on `[a, b)` with `n` points.
    pub fn periodic(a: T, b: T, n: usize) -> Result<Self> {
        Self::new(a, (b - a) / T::lit(n as f64), n)
    }

    /// Closed grid on `[a, b]` with `n` points.
    pub fn closed(a: T, b: T, n: usize) -> Result<Self> {
        Self::new(a, (b - a) / T::lit(n.saturating_sub(1).max(1) as f64), n)
    }

    #[inline]
    pub fn x(&self, i: usize) -> T {
        self.x_min + self.dx * T::lit(i as f64)
    }

    pub fn x_max(&self) -> T {
        self.x(self.n - 1)
    }

    pub fn points(&self) -> impl DoubleEndedIterator<Item = T> + ExactSizeIterator + '_ {
        (0..self.n).map(|i| self.x(i))
    }

    /// Sub-grid of points with `x >= x_lo`.
    pub fn tail_from(&self, x_lo: T) -> Option<(usize, Self)> {
        let start = ((x_lo - self.x_min) / self.dx).ceil().max(T::zero()).to_usize()?;
        (start + 2 <= self.n).then(|| (start, Self { x_min: self.x(start), dx: self.dx, n: self.n - start }))
    }

    pub fn same_as(&self, other: &Self) -> bool {
        let tol = T::tol(1e-12) * self.dx;
        self.n == other.n && (self.x_min - other.x_min).abs() <= tol && (self.dx - other.dx).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_and_closed() {
        let g = UniformGrid::periodic(-1.0, 1.0, 4).unwrap();
        assert_eq!(g.dx, 0.5);
        assert_eq!(g.x_max(), 0.5);
        let c = UniformGrid::closed(-1.0, 1.0, 5).unwrap();
        assert_eq!(c.x_max(), 1.0);
        let (i, t) = c.tail_from(0.1).unwrap();
        assert_eq!((i, t.n, t.x_min), (3, 2, 0.5));
        assert!(UniformGrid::new(0.0, -1.0, 3).is_err());
    }
}
