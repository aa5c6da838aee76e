//! Bilinear sampling kernels on row-major grids, in continuous index space.

use ndarray::Array2;

/// Cell of a continuous index: top-left corner and fractional offsets.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub j0: i64,
    pub k0: i64,
    /// fractional row offset
    pub u: f64,
    /// fractional column offset
    pub t: f64,
}

impl Cell {
    /// Floor cell; on integer-valued indices the cell to the right/below is used.
    #[inline]
    pub fn floor(fj: f64, fk: f64) -> Option<Self> {
        if !(fj.is_finite() && fk.is_finite()) || fj.abs() > 1e9 || fk.abs() > 1e9 {
            return None;
        }
        let (j0, k0) = (fj.floor(), fk.floor());
        Some(Self { j0: j0 as i64, k0: k0 as i64, u: fj - j0, t: fk - k0 })
    }

    /// Cell clamped into the grid interior so that values beyond the outer pixel
    /// centers are extrapolated linearly.
    #[inline]
    pub fn clamped(fj: f64, fk: f64, n: usize) -> Self {
        let hi = (n - 2) as f64;
        let j0 = fj.floor().clamp(0.0, hi);
        let k0 = fk.floor().clamp(0.0, hi);
        Self { j0: j0 as i64, k0: k0 as i64, u: fj - j0, t: fk - k0 }
    }

    #[inline]
    fn corners(&self) -> [(i64, i64, f64); 4] {
        let (u, t) = (self.u, self.t);
        [
            (self.j0, self.k0, (1.0 - u) * (1.0 - t)),
            (self.j0, self.k0 + 1, (1.0 - u) * t),
            (self.j0 + 1, self.k0, u * (1.0 - t)),
            (self.j0 + 1, self.k0 + 1, u * t),
        ]
    }
}

#[inline]
fn at_zero(a: &Array2<f64>, j: i64, k: i64) -> f64 {
    let (r, c) = a.dim();
    if j < 0 || k < 0 || j >= r as i64 || k >= c as i64 {
        0.0
    } else {
        a[[j as usize, k as usize]]
    }
}

/// Bilinear sample of the zero-extended array.
#[inline]
pub(crate) fn sample_zero(a: &Array2<f64>, fj: f64, fk: f64) -> f64 {
    match Cell::floor(fj, fk) {
        None => 0.0,
        Some(cell) => cell.corners().iter().map(|&(j, k, w)| w * at_zero(a, j, k)).sum(),
    }
}

/// Partial derivatives `(d/dfj, d/dfk)` of the zero-extended bilinear interpolant.
#[inline]
pub(crate) fn gradient_zero(a: &Array2<f64>, fj: f64, fk: f64) -> (f64, f64) {
    let Some(c) = Cell::floor(fj, fk) else { return (0.0, 0.0) };
    let v00 = at_zero(a, c.j0, c.k0);
    let v01 = at_zero(a, c.j0, c.k0 + 1);
    let v10 = at_zero(a, c.j0 + 1, c.k0);
    let v11 = at_zero(a, c.j0 + 1, c.k0 + 1);
    let d_row = (1.0 - c.t) * (v10 - v00) + c.t * (v11 - v01);
    let d_col = (1.0 - c.u) * (v01 - v00) + c.u * (v11 - v10);
    (d_row, d_col)
}

/// Transpose of [`sample_zero`]: spreads `value` onto the four corners.
#[inline]
pub(crate) fn scatter_zero(out: &mut Array2<f64>, fj: f64, fk: f64, value: f64) {
    let Some(cell) = Cell::floor(fj, fk) else { return };
    let (r, c) = out.dim();
    for (j, k, w) in cell.corners() {
        if j >= 0 && k >= 0 && (j as usize) < r && (k as usize) < c {
            out[[j as usize, k as usize]] += w * value;
        }
    }
}

/// Bilinear sample with linear extrapolation beyond the outer pixel centers.
#[inline]
pub(crate) fn sample_extrapolated(a: &Array2<f64>, fj: f64, fk: f64) -> f64 {
    let cell = Cell::clamped(fj, fk, a.nrows());
    cell.corners().iter().map(|&(j, k, w)| w * a[[j as usize, k as usize]]).sum()
}

/// Bilinear sample with the index clamped to the grid (edge replication).
#[inline]
pub(crate) fn sample_clamped(a: &Array2<f64>, fj: f64, fk: f64) -> f64 {
    let hi = (a.nrows() - 1) as f64;
    let fj = fj.clamp(0.0, hi);
    let fk = fk.clamp(0.0, hi);
    sample_extrapolated(a, fj, fk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unity() {
        let a = Array2::from_elem((4, 4), 2.5);
        assert!((sample_zero(&a, 1.3, 2.7) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn scatter_is_transpose() {
        let a = Array2::from_shape_fn((5, 5), |(j, k)| (j * 7 + k * 3) as f64 % 5.0);
        let mut s = Array2::zeros((5, 5));
        let (fj, fk, v) = (3.4, -0.3, 1.7);
        scatter_zero(&mut s, fj, fk, v);
        let lhs = v * sample_zero(&a, fj, fk);
        let rhs: f64 = (&s * &a).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn extrapolation_reproduces_affine() {
        let a = Array2::from_shape_fn((6, 6), |(j, k)| 2.0 * j as f64 - 0.5 * k as f64 + 1.0);
        let v = sample_extrapolated(&a, -0.5, 5.5);
        assert!((v - (2.0 * -0.5 - 0.5 * 5.5 + 1.0)).abs() < 1e-12);
    }
}
