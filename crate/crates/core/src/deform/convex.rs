//! Restriction of a deformation to a convex region so that no mass crosses
//! its boundary.

use ndarray::Array2;

use super::DeformationField;
use crate::error::{Error, Result};

/// Chords shorter than this (in pixels) are treated as a single tangent point.
pub const DEGENERATE_CHORD: f64 = 1e-9;

/// Axis-aligned ellipse `((x-cx)/a)² + ((y-cy)/b)² <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexRegion {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
}

impl ConvexRegion {
    pub fn ellipse(center: (f64, f64), a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("ellipse semi-axes must be positive, got {a}, {b}")));
        }
        Ok(Self { cx: center.0, cy: center.1, a, b })
    }

    fn level(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.a).powi(2) + ((y - self.cy) / self.b).powi(2)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }

    /// Outward unit normal of the level set through `(x, y)`.
    pub fn normal(&self, x: f64, y: f64) -> (f64, f64) {
        let gx = (x - self.cx) / (self.a * self.a);
        let gy = (y - self.cy) / (self.b * self.b);
        let len = gx.hypot(gy);
        if len == 0.0 {
            (0.0, 0.0)
        } else {
            (gx / len, gy / len)
        }
    }

    /// Boundary point at parameter angle `phi`.
    pub fn boundary_point(&self, phi: f64) -> (f64, f64) {
        (self.cx + self.a * phi.cos(), self.cy + self.b * phi.sin())
    }

    /// Extreme abscissae `(r1_b, r1_t)` of the horizontal chord at height `r2`.
    pub fn chord(&self, r2: f64) -> Option<(f64, f64)> {
        let v = (r2 - self.cy) / self.b;
        if v.abs() > 1.0 {
            return None;
        }
        let half = self.a * (1.0 - v * v).max(0.0).sqrt();
        Some((self.cx - half, self.cx + half))
    }

    /// Largest `lambda` in `[0, 1]` with `from + lambda (to - from)` in the
    /// region, for `from` inside it.
    fn exit_fraction(&self, from: (f64, f64), to: (f64, f64)) -> f64 {
        if self.contains(to.0, to.1) {
            return 1.0;
        }
        let (ux, uy) = ((from.0 - self.cx) / self.a, (from.1 - self.cy) / self.b);
        let (dx, dy) = ((to.0 - from.0) / self.a, (to.1 - from.1) / self.b);
        let qa = dx * dx + dy * dy;
        let qb = 2.0 * (ux * dx + uy * dy);
        let qc = (ux * ux + uy * uy - 1.0).min(0.0);
        if qa == 0.0 {
            return 0.0;
        }
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        // stable form of the positive root
        let lambda = if qb >= 0.0 { -2.0 * qc / (qb + disc.sqrt()) } else { (-qb + disc.sqrt()) / (2.0 * qa) };
        if lambda.is_finite() {
            lambda.clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Target of the normal-corrected field at an arbitrary point `(r1, r2)`:
/// the normal displacement components at both chord ends are removed along
/// their own normals, interpolated linearly in `r1`. Points outside the region
/// map to themselves.
pub fn remove_normal_components(u_in: &DeformationField, c: &ConvexRegion, r1: f64, r2: f64) -> (f64, f64) {
    if !c.contains(r1, r2) {
        return (r1, r2);
    }
    let target = u_in.sample_at(r1, r2);
    let Some((lo, hi)) = c.chord(r2) else { return target };
    let len = hi - lo;
    let normal_part = |r1e: f64| {
        let (tx, ty) = u_in.sample_at(r1e, r2);
        let n = c.normal(r1e, r2);
        let comp = n.0 * (tx - r1e) + n.1 * (ty - r2);
        (n.0 * comp, n.1 * comp)
    };
    if len < DEGENERATE_CHORD {
        // both chord ends coincide with the tangent point
        let n = normal_part(r1);
        return (target.0 - n.0, target.1 - n.1);
    }
    let (nt, nb) = (normal_part(hi), normal_part(lo));
    let wt = ((r1 - lo) / len).clamp(0.0, 1.0);
    let wb = 1.0 - wt;
    (target.0 - wt * nt.0 - wb * nb.0, target.1 - wt * nt.1 - wb * nb.1)
}

/// Full constraint at one point: normal removal followed by pulling the
/// target back along its displacement until it lies in the region.
pub fn constrain_point(u_in: &DeformationField, c: &ConvexRegion, r1: f64, r2: f64) -> (f64, f64) {
    if !c.contains(r1, r2) {
        return (r1, r2);
    }
    let t = remove_normal_components(u_in, c, r1, r2);
    let lambda = c.exit_fraction((r1, r2), t);
    (r1 + lambda * (t.0 - r1), r2 + lambda * (t.1 - r2))
}

/// Constrained field `Ū^in`: identity outside `c`, inside it no target leaves `c`
/// and boundary points keep a zero normal displacement.
pub fn constrain_convex(u_in: &DeformationField, c: &ConvexRegion) -> Result<DeformationField> {
    let g = u_in.grid();
    let mut px = Array2::zeros(g.shape());
    let mut py = Array2::zeros(g.shape());
    for j in 0..g.n() {
        for k in 0..g.n() {
            let (x, y) = g.coord(j, k);
            let (tx, ty) = constrain_point(u_in, c, x, y);
            px[[j, k]] = tx;
            py[[j, k]] = ty;
        }
    }
    DeformationField::new(px, py)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{synth_affine, synth_rigid};
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn region() -> ConvexRegion {
        ConvexRegion::ellipse((1.0, -0.5), 9.0, 6.5).unwrap()
    }

    #[test]
    fn identity_stays_identity() {
        let g = GridSpec::new(32).unwrap();
        let out = constrain_convex(&DeformationField::identity(g), &region()).unwrap();
        assert!(out.is_identity(1e-12));
    }

    #[test]
    fn exterior_pixels_are_identity() {
        let g = GridSpec::new(32).unwrap();
        let c = region();
        let out = constrain_convex(&synth_rigid(0.2, (1.0, 2.0), g), &c).unwrap();
        for j in 0..32 {
            for k in 0..32 {
                let (x, y) = g.coord(j, k);
                if !c.contains(x, y) {
                    assert_eq!(out.target(j, k), (x, y));
                }
            }
        }
    }

    #[test]
    fn interior_targets_stay_inside() {
        let g = GridSpec::new(32).unwrap();
        let c = region();
        let out = constrain_convex(&synth_rigid(0.0, (3.0, -2.0), g), &c).unwrap();
        for j in 0..32 {
            for k in 0..32 {
                let (x, y) = g.coord(j, k);
                if c.contains(x, y) {
                    let (tx, ty) = out.target(j, k);
                    assert!(c.level(tx, ty) <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn chord_ends_lie_on_boundary() {
        let c = region();
        let (lo, hi) = c.chord(2.0).unwrap();
        assert!((c.level(lo, 2.0) - 1.0).abs() < 1e-12 && (c.level(hi, 2.0) - 1.0).abs() < 1e-12);
        assert!(hi > lo);
        assert!(c.chord(7.0).is_none());
    }

    #[test]
    fn top_extreme_point_has_zero_normal_displacement() {
        let g = GridSpec::new(32).unwrap();
        let c = region();
        let u = synth_affine([[1.03, 0.04], [-0.02, 0.97]], (0.8, -0.6), g);
        let (r1, r2) = c.boundary_point(std::f64::consts::FRAC_PI_2);
        let (tx, ty) = constrain_point(&u, &c, r1, r2);
        let n = c.normal(r1, r2);
        assert!((n.0 * (tx - r1) + n.1 * (ty - r2)).abs() <= 1e-6);
    }

    proptest! {
        #[test]
        fn boundary_normal_displacement_vanishes(
            g00 in 0.9f64..1.1, g01 in -0.1f64..0.1, g10 in -0.1f64..0.1, g11 in 0.9f64..1.1,
            bx in -2.0f64..2.0, by in -2.0f64..2.0,
        ) {
            let g = GridSpec::new(32).unwrap();
            let c = region();
            let u = synth_affine([[g00, g01], [g10, g11]], (bx, by), g);
            for i in 0..720 {
                let phi = i as f64 / 720.0 * std::f64::consts::TAU;
                let (r1, r2) = c.boundary_point(phi);
                let n = c.normal(r1, r2);
                let (tx, ty) = constrain_point(&u, &c, r1, r2);
                prop_assert!((n.0 * (tx - r1) + n.1 * (ty - r2)).abs() <= 1e-6, "phi={phi}");
                let (sx, sy) = remove_normal_components(&u, &c, r1, r2);
                prop_assert!((n.0 * (sx - r1) + n.1 * (sy - r2)).abs() <= 1e-6);
            }
        }
    }
}
