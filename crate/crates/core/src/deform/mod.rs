//! Deformation fields: synthesis, constraint, composition, warping and the
//! per-pixel derivative of a warp with respect to its sample positions.
//!
//! A field stores absolute target coordinates: `U(x_{j,k}) = (p_x[j,k], p_y[j,k])`
//! is the reference-configuration position of the particle found at pixel
//! `(j, k)`. Warping an image is therefore a pull-back,
//! `apply(U, s)[j,k] = s(U(x_{j,k}))`, evaluated with zero-extended bilinear
//! interpolation.

mod convex;
mod ffd;
mod sequence;

pub use convex::{constrain_convex, constrain_point, remove_normal_components, ConvexRegion, DEGENERATE_CHORD};
pub use ffd::{synth_ffd, FfdSpec, NodeMotion, SplineOrder, TrigTrajectory};
pub use sequence::{perturb_sequence, synth_sequence, MotionClass, SequenceConfig};

use ndarray::{Array2, Array3, Array4, Axis as NdAxis};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image};
use crate::interp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    grid: GridSpec,
    px: Array2<f64>,
    py: Array2<f64>,
}

impl DeformationField {
    pub fn new(px: Array2<f64>, py: Array2<f64>) -> Result<Self> {
        let n = px.nrows();
        let grid = GridSpec::new(n)?;
        grid.check_shape(&px, "p_x")?;
        grid.check_shape(&py, "p_y")?;
        if px.iter().chain(py.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("deformation field".into()));
        }
        Ok(Self { grid, px, py })
    }

    pub fn identity(grid: GridSpec) -> Self {
        Self::from_fn(grid, |x, y| (x, y))
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut px = Array2::zeros(grid.shape());
        let mut py = Array2::zeros(grid.shape());
        for j in 0..grid.n() {
            for k in 0..grid.n() {
                let (x, y) = grid.coord(j, k);
                let (tx, ty) = f(x, y);
                px[[j, k]] = tx;
                py[[j, k]] = ty;
            }
        }
        Self { grid, px, py }
    }

    /// Field `x -> x + d(x)` from displacement arrays.
    pub fn from_displacement(grid: GridSpec, dx: &Array2<f64>, dy: &Array2<f64>) -> Result<Self> {
        let id = Self::identity(grid);
        Self::new(&id.px + dx, &id.py + dy)
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn px(&self) -> &Array2<f64> {
        &self.px
    }

    #[inline]
    pub fn py(&self) -> &Array2<f64> {
        &self.py
    }

    pub fn param(&self, axis: Axis) -> &Array2<f64> {
        match axis {
            Axis::X => &self.px,
            Axis::Y => &self.py,
        }
    }

    pub fn param_mut(&mut self, axis: Axis) -> &mut Array2<f64> {
        match axis {
            Axis::X => &mut self.px,
            Axis::Y => &mut self.py,
        }
    }

    #[inline]
    pub fn target(&self, j: usize, k: usize) -> (f64, f64) {
        (self.px[[j, k]], self.py[[j, k]])
    }

    /// Displacement arrays `U(x) - x`.
    pub fn displacement(&self) -> (Array2<f64>, Array2<f64>) {
        let g = self.grid;
        let mut dx = self.px.clone();
        let mut dy = self.py.clone();
        for ((j, k), v) in dx.indexed_iter_mut() {
            *v -= g.coord(j, k).0;
        }
        for ((j, k), v) in dy.indexed_iter_mut() {
            *v -= g.coord(j, k).1;
        }
        (dx, dy)
    }

    /// Continuous extension of the field: bilinear interpolation of the
    /// coordinate arrays, linearly extrapolated in the half-pixel border of Ω.
    pub fn sample_at(&self, x: f64, y: f64) -> (f64, f64) {
        let (fj, fk) = self.grid.to_index(x, y);
        (interp::sample_extrapolated(&self.px, fj, fk), interp::sample_extrapolated(&self.py, fj, fk))
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let (dx, dy) = self.displacement();
        dx.iter().chain(dy.iter()).all(|v| v.abs() <= tol)
    }

    /// Stacked `[2, N, N]` array (p_x, p_y).
    pub fn to_array(&self) -> Array3<f64> {
        ndarray::stack(NdAxis(0), &[self.px.view(), self.py.view()]).expect("same shapes")
    }

    pub fn from_array(a: &Array3<f64>) -> Result<Self> {
        if a.shape()[0] != 2 {
            return Err(Error::DimensionMismatch(format!("field array must be [2,N,N], got {:?}", a.shape())));
        }
        Self::new(a.index_axis(NdAxis(0), 0).to_owned(), a.index_axis(NdAxis(0), 1).to_owned())
    }
}

/// Ordered per-excitation fields; the first is the reference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationSequence {
    fields: Vec<DeformationField>,
}

/// Tolerance for accepting the first field as the identity.
pub const IDENTITY_TOL: f64 = 1e-9;

impl DeformationSequence {
    pub fn new(fields: Vec<DeformationField>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidArgument("deformation sequence must not be empty".into()))?;
        let grid = first.grid();
        if fields.iter().any(|f| f.grid() != grid) {
            return Err(Error::DimensionMismatch("fields on different grids".into()));
        }
        if !first.is_identity(IDENTITY_TOL) {
            return Err(Error::InvalidArgument("first deformation field must be the identity".into()));
        }
        Ok(Self { fields })
    }

    pub fn identity(grid: GridSpec, n_exc: usize) -> Self {
        Self { fields: vec![DeformationField::identity(grid); n_exc.max(1)] }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn grid(&self) -> GridSpec {
        self.fields[0].grid()
    }

    pub fn fields(&self) -> &[DeformationField] {
        &self.fields
    }

    pub fn get(&self, i: usize) -> &DeformationField {
        &self.fields[i]
    }

    /// Replaces field `i >= 1`; the reference field cannot be changed.
    pub fn set(&mut self, i: usize, field: DeformationField) -> Result<()> {
        if i == 0 {
            return Err(Error::InvalidArgument("the reference field is pinned to the identity".into()));
        }
        if field.grid() != self.grid() {
            return Err(Error::DimensionMismatch("field grid differs from sequence".into()));
        }
        self.fields[i] = field;
        Ok(())
    }

    pub fn to_array(&self) -> Array4<f64> {
        let views: Vec<_> = self.fields.iter().map(|f| f.to_array()).collect();
        let views: Vec<_> = views.iter().map(|a| a.view()).collect();
        ndarray::stack(NdAxis(0), &views).expect("same shapes")
    }

    pub fn from_array(a: &Array4<f64>) -> Result<Self> {
        let fields = a
            .axis_iter(NdAxis(0))
            .map(|f| DeformationField::from_array(&f.to_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields)
    }
}

/// Rigid motion parameters: rotation `theta` (radians) and shift `(tx, ty)` in pixels.
///
/// The object is rotated by `theta` about the origin and then shifted, so the
/// pull-back field is `p(x) = R(-theta) (x - t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidParams {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidParams {
    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        Self { theta, tx, ty }
    }

    pub fn field(&self, grid: GridSpec) -> DeformationField {
        synth_rigid(self.theta, (self.tx, self.ty), grid)
    }
}

pub fn synth_rigid(theta: f64, shift: (f64, f64), grid: GridSpec) -> DeformationField {
    let (s, c) = theta.sin_cos();
    DeformationField::from_fn(grid, |x, y| {
        let (dx, dy) = (x - shift.0, y - shift.1);
        // R(-theta) = [[c, s], [-s, c]]
        (c * dx + s * dy, -s * dx + c * dy)
    })
}

/// Global affine pull-back `p(x) = gamma x + b`.
pub fn synth_affine(gamma: [[f64; 2]; 2], b: (f64, f64), grid: GridSpec) -> DeformationField {
    DeformationField::from_fn(grid, |x, y| {
        (gamma[0][0] * x + gamma[0][1] * y + b.0, gamma[1][0] * x + gamma[1][1] * y + b.1)
    })
}

/// Least-squares rigid parameters of a field over the pixels where `mask` is set
/// (all pixels when `None`).
pub fn fit_rigid(field: &DeformationField, mask: Option<&Array2<bool>>) -> Result<RigidParams> {
    let g = field.grid();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for j in 0..g.n() {
        for k in 0..g.n() {
            if mask.is_none_or(|m| m[[j, k]]) {
                src.push(g.coord(j, k));
                dst.push(field.target(j, k));
            }
        }
    }
    if src.len() < 2 {
        return Err(Error::InvalidArgument("rigid fit needs at least two pixels".into()));
    }
    let n = src.len() as f64;
    let mean = |v: &[(f64, f64)]| {
        let (sx, sy) = v.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        (sx / n, sy / n)
    };
    let (sx, sy) = mean(&src);
    let (dx, dy) = mean(&dst);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (s, d) in src.iter().zip(&dst) {
        let (ax, ay) = (s.0 - sx, s.1 - sy);
        let (bx, by) = (d.0 - dx, d.1 - dy);
        dot += ax * bx + ay * by;
        cross += ax * by - ay * bx;
    }
    // dst ≈ R(phi) src + c with phi = -theta
    let phi = cross.atan2(dot);
    let (s, c) = phi.sin_cos();
    let cx = dx - (c * sx - s * sy);
    let cy = dy - (s * sx + c * sy);
    // c = -R(-theta) t  =>  t = -R(theta) c
    let theta = -phi;
    let (st, ct) = theta.sin_cos();
    Ok(RigidParams { theta, tx: -(ct * cx - st * cy), ty: -(st * cx + ct * cy) })
}

fn check_grid(a: GridSpec, b: GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("grid {} vs {}", a.n(), b.n())));
    }
    Ok(())
}

/// Pull-back warp: `out[j,k] = s(U(x_{j,k}))`, zero outside the padded grid.
pub fn apply(u: &DeformationField, s: &Image) -> Result<Image> {
    check_grid(u.grid(), s.grid())?;
    let g = u.grid();
    let values = Array2::from_shape_fn(g.shape(), |(j, k)| {
        let (x, y) = u.target(j, k);
        let (fj, fk) = g.to_index(x, y);
        interp::sample_zero(s.values(), fj, fk)
    });
    Image::new(values)
}

/// Warp of an arbitrary real array (no sign constraint).
pub fn apply_array(u: &DeformationField, s: &Array2<f64>) -> Array2<f64> {
    let g = u.grid();
    Array2::from_shape_fn(g.shape(), |(j, k)| {
        let (x, y) = u.target(j, k);
        let (fj, fk) = g.to_index(x, y);
        interp::sample_zero(s, fj, fk)
    })
}

/// Transpose of [`apply`]: scatters `r` back to the sample positions.
pub fn apply_adjoint(u: &DeformationField, r: &Array2<f64>) -> Array2<f64> {
    let g = u.grid();
    let mut out = Array2::zeros(g.shape());
    for ((j, k), &v) in r.indexed_iter() {
        if v != 0.0 {
            let (x, y) = u.target(j, k);
            let (fj, fk) = g.to_index(x, y);
            interp::scatter_zero(&mut out, fj, fk, v);
        }
    }
    out
}

/// Derivative of `apply(U, s)[j,k]` with respect to the `axis` coordinate of
/// the sample point `U(x_{j,k})`. Each entry depends only on its own pixel's
/// parameters; on cell boundaries the floor cell is used.
pub fn du_dp(u: &DeformationField, s: &Array2<f64>, axis: Axis) -> Array2<f64> {
    let (dx, dy) = du_dp_both(u, s);
    match axis {
        Axis::X => dx,
        Axis::Y => dy,
    }
}

/// Both axis derivatives in one pass.
pub fn du_dp_both(u: &DeformationField, s: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let g = u.grid();
    let mut dx = Array2::zeros(g.shape());
    let mut dy = Array2::zeros(g.shape());
    for j in 0..g.n() {
        for k in 0..g.n() {
            let (x, y) = u.target(j, k);
            let (fj, fk) = g.to_index(x, y);
            let (d_row, d_col) = interp::gradient_zero(s, fj, fk);
            dx[[j, k]] = d_col;
            dy[[j, k]] = d_row;
        }
    }
    (dx, dy)
}

/// `compose(outer, inner)(x) = inner(outer(x))`, i.e. the operator
/// `outer[inner[·]]` on images. Targets of `outer` leaving Ω are clamped to
/// its boundary before `inner` is sampled.
pub fn compose(outer: &DeformationField, inner: &DeformationField) -> Result<DeformationField> {
    check_grid(outer.grid(), inner.grid())?;
    let g = outer.grid();
    let h = g.half();
    let mut px = Array2::zeros(g.shape());
    let mut py = Array2::zeros(g.shape());
    for j in 0..g.n() {
        for k in 0..g.n() {
            let (x, y) = outer.target(j, k);
            let (tx, ty) = inner.sample_at(x.clamp(-h, h), y.clamp(-h, h));
            px[[j, k]] = tx;
            py[[j, k]] = ty;
        }
    }
    DeformationField::new(px, py)
}
