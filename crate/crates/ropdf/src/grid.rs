//! Uniform phase-space grids for the finite-volume density solvers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("need at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("empty sample set")]
    EmptySamples,
    #[error("degenerate sample range at {0}")]
    DegenerateRange(f64),
    #[error("padding must lie in [0.5, 1.0] standard deviations, got {0}")]
    BadPadding(f64),
    #[error("non-finite sample encountered")]
    NonFinite,
}

/// Uniform 1D cell-centered grid over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self, GridError> {
        if n < 2 {
            return Err(GridError::TooFewCells(n));
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(GridError::NonFinite);
        }
        if hi <= lo {
            return Err(GridError::DegenerateRange(lo));
        }
        Ok(Grid1D { lo, hi, n })
    }

    /// Builds a grid covering the sample range padded by `padding_stds`
    /// sample standard deviations on each side. With `floor_zero` the lower
    /// edge is clamped at zero, which suits nonnegative line energies.
    pub fn from_samples(
        samples: &[f64],
        n: usize,
        padding_stds: f64,
        floor_zero: bool,
    ) -> Result<Self, GridError> {
        if samples.is_empty() {
            return Err(GridError::EmptySamples);
        }
        if !(0.5..=1.0).contains(&padding_stds) {
            return Err(GridError::BadPadding(padding_stds));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFinite);
        }
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0))
            .sqrt();
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if sd == 0.0 || min == max {
            return Err(GridError::DegenerateRange(min));
        }
        let mut lo = min - padding_stds * sd;
        let hi = max + padding_stds * sd;
        if floor_zero {
            lo = lo.max(0.0);
        }
        Grid1D::new(lo, hi, n)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx()
    }

    /// Face `i` sits at the left edge of cell `i`; there are `n + 1` faces.
    pub fn face(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    pub fn faces(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.face(i)).collect()
    }

    /// Cell containing `x`, or `None` outside the grid.
    pub fn cell_index(&self, x: f64) -> Option<usize> {
        if x < self.lo || x > self.hi {
            return None;
        }
        Some((((x - self.lo) / self.dx()) as usize).min(self.n - 1))
    }
}

/// Tensor-product 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    pub fn new(x: Grid1D, y: Grid1D) -> Self {
        Grid2D { x, y }
    }

    pub fn from_samples(
        sx: &[f64],
        sy: &[f64],
        nx: usize,
        ny: usize,
        padding_stds: f64,
        floor_zero: bool,
    ) -> Result<Self, GridError> {
        Ok(Grid2D {
            x: Grid1D::from_samples(sx, nx, padding_stds, floor_zero)?,
            y: Grid1D::from_samples(sy, ny, padding_stds, floor_zero)?,
        })
    }

    pub fn cell_area(&self) -> f64 {
        self.x.dx() * self.y.dx()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn geometry_is_consistent() {
        let g = Grid1D::new(-1.0, 3.0, 8).unwrap();
        assert_abs_diff_eq!(g.dx(), 0.5);
        assert_abs_diff_eq!(g.center(0), -0.75);
        assert_abs_diff_eq!(g.face(0), -1.0);
        assert_abs_diff_eq!(g.face(8), 3.0);
        assert_eq!(g.cell_index(-0.99), Some(0));
        assert_eq!(g.cell_index(3.0), Some(7));
        assert_eq!(g.cell_index(3.01), None);
        assert_eq!(g.centers().len(), 8);
        assert_eq!(g.faces().len(), 9);
    }

    #[test]
    fn from_samples_pads_and_floors() {
        let samples = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let g = Grid1D::from_samples(&samples, 10, 1.0, false).unwrap();
        let sd = (2.5f64).sqrt();
        assert_abs_diff_eq!(g.lo(), 1.0 - sd, epsilon = 1e-12);
        assert_abs_diff_eq!(g.hi(), 5.0 + sd, epsilon = 1e-12);

        let samples = vec![0.1, 0.5, 0.9];
        let g = Grid1D::from_samples(&samples, 10, 1.0, true).unwrap();
        assert_eq!(g.lo(), 0.0);
    }

    #[test]
    fn from_samples_rejects_bad_input() {
        assert!(matches!(
            Grid1D::from_samples(&[], 10, 0.5, false),
            Err(GridError::EmptySamples)
        ));
        assert!(matches!(
            Grid1D::from_samples(&[1.0, 2.0], 10, 0.3, false),
            Err(GridError::BadPadding(_))
        ));
        assert!(matches!(
            Grid1D::from_samples(&[2.0, 2.0, 2.0], 10, 0.5, false),
            Err(GridError::DegenerateRange(_))
        ));
        assert!(matches!(
            Grid1D::from_samples(&[1.0, f64::NAN], 10, 0.5, false),
            Err(GridError::NonFinite)
        ));
        assert!(matches!(Grid1D::new(0.0, 1.0, 1), Err(GridError::TooFewCells(1))));
    }
}
