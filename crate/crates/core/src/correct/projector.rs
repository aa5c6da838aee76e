//! Projections of displacement fields onto admissible deformations.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Maps a proposed displacement field `(d^x, d^y)` at level `h` to an
/// admissible one. Implementations must be idempotent and keep zero fields zero.
pub trait Projector: Sync {
    fn project(&self, dx: &Array2<f64>, dy: &Array2<f64>, h: u32) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// Leaves fields untouched.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityProjector;

impl Projector for IdentityProjector {
    fn project(&self, dx: &Array2<f64>, dy: &Array2<f64>, _h: u32) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((dx.clone(), dy.clone()))
    }
}

/// Least-squares fit onto uniform cubic B-splines, with control spacing
/// `spacing / 2^h` pixels of the level grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineProjector {
    /// Control spacing in pixels at the finest level.
    pub spacing: f64,
}

impl Default for SplineProjector {
    fn default() -> Self {
        Self { spacing: 16.0 }
    }
}

fn cubic_bspline(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

/// Orthogonal projector `Q Qᵀ` onto the column space of the B-spline basis onto the spline space on `n` samples,
/// or `None` when the space spans all of `R^n`.
pub fn spline_projection_matrix(n: usize, spacing: f64) -> Result<Option<DMatrix<f64>>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!("spline spacing must be positive, got {spacing}")));
    }
    // knots one spacing beyond both ends so polynomials up to degree 3 are reproduced
    let m = (n as f64 / spacing).ceil() as usize + 3;
    if m >= n {
        return Ok(None);
    }
    let origin = 0.5 * (n as f64 - spacing * (m - 1) as f64);
    let b = DMatrix::from_fn(n, m, |p, l| {
        let pos = p as f64 + 0.5;
        cubic_bspline((pos - (origin + l as f64 * spacing)) / spacing)
    });
    let q = b.qr().q();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spline basis factorization".into()));
    }
    Ok(Some(&q * q.transpose()))
}

fn to_matrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |j, k| a[[j, k]])
}

fn from_matrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(j, k)| m[(j, k)])
}

impl SplineProjector {
    pub fn level_spacing(&self, h: u32) -> f64 {
        self.spacing / (1u64 << h) as f64
    }
}

impl Projector for SplineProjector {
    fn project(&self, dx: &Array2<f64>, dy: &Array2<f64>, h: u32) -> Result<(Array2<f64>, Array2<f64>)> {
        let Some(p) = spline_projection_matrix(dx.nrows(), self.level_spacing(h))? else {
            return Ok((dx.clone(), dy.clone()));
        };
        let apply = |a: &Array2<f64>| from_matrix(&(&p * to_matrix(a) * p.transpose()));
        Ok((apply(dx), apply(dy)))
    }
}
