//! Square pixel grids and the array types living on them.
//!
//! Pixel `(j, k)` (row `j`, column `k`) sits at the coordinate
//! `x = k + 0.5 - N/2`, `y = j + 0.5 - N/2`, so the field of view is the
//! square `[-N/2, N/2]²` in pixel units and the origin lies between the four
//! central pixels.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Half side length of the field of view.
    #[inline]
    pub fn half(&self) -> f64 {
        self.n as f64 / 2.0
    }

    /// Coordinate `(x, y)` of pixel `(j, k)`.
    #[inline]
    pub fn coord(&self, j: usize, k: usize) -> (f64, f64) {
        let h = self.half();
        (k as f64 + 0.5 - h, j as f64 + 0.5 - h)
    }

    /// Continuous `(row, col)` index of a coordinate; exact inverse of [`coord`](Self::coord)
    /// on pixel centers.
    #[inline]
    pub fn to_index(&self, x: f64, y: f64) -> (f64, f64) {
        let h = self.half();
        (y - 0.5 + h, x - 0.5 + h)
    }

    /// Whether `(x, y)` lies in the closed field of view.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let h = self.half();
        x.abs() <= h && y.abs() <= h
    }

    /// Grid of `n / factor` pixels covering the same field of view.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "grid size {} not divisible by {factor}",
                self.n
            )));
        }
        Self::new(self.n / factor)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.n)
    }

    pub(crate) fn check_shape<T>(&self, a: &Array2<T>, what: &str) -> Result<()> {
        if a.dim() != self.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: expected {}x{}, got {:?}",
                self.n,
                self.n,
                a.dim()
            )));
        }
        Ok(())
    }
}

/// Real image on a grid.
///
/// Phantoms, warps of nonnegative images and positivity-constrained
/// reconstructions are nonnegative; [`Image::is_nonnegative`] checks it.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: GridSpec,
    values: Array2<f64>,
}

impl Image {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("image must be square, got {r}x{c}")));
        }
        let grid = GridSpec::new(r)?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: Array2::zeros(grid.shape()) }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: Array2::from_elem(grid.shape(), value) }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn(grid.shape(), |(j, k)| {
            let (x, y) = grid.coord(j, k);
            f(x, y)
        });
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Binary support mask `value > threshold`.
    pub fn support(&self, threshold: f64) -> Array2<bool> {
        self.values.mapv(|v| v > threshold)
    }
}

/// Complex array on a grid (k-space grids, coil-weighted images).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Array2<Complex64>,
}

impl ComplexField {
    pub fn new(values: Array2<Complex64>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("field must be square, got {r}x{c}")));
        }
        let grid = GridSpec::new(r)?;
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("complex field".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: Array2::zeros(grid.shape()) }
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(GridSpec::new(6).is_err());
        assert!(GridSpec::new(9).is_err());
        assert!(GridSpec::new(8).is_ok());
    }

    #[test]
    fn coordinate_map_inverts() {
        let g = GridSpec::new(16).unwrap();
        for j in 0..16 {
            for k in 0..16 {
                let (x, y) = g.coord(j, k);
                let (fj, fk) = g.to_index(x, y);
                assert_eq!((fj, fk), (j as f64, k as f64));
            }
        }
        assert_eq!(g.coord(0, 0), (-7.5, -7.5));
        assert_eq!(g.coord(8, 8), (0.5, 0.5));
    }

    #[test]
    fn image_rejects_nan() {
        let mut a = Array2::zeros((8, 8));
        a[[1, 1]] = f64::NAN;
        assert!(Image::new(a).is_err());
    }
}
