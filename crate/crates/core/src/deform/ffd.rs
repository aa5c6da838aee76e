//! Free-form deformations: per-node affine maps on a regular control grid,
//! interpolated onto the pixel grid by splines.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use super::DeformationField;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplineOrder {
    /// Bilinear: continuous piecewise affine fields.
    Linear,
    /// Natural cubic spline interpolation.
    Cubic,
}

/// Smooth scalar trajectory over normalized time `tau` in `[0, 1]`:
/// `offset + sum_r a_r sin(pi r tau) + c_r (1 - cos(pi r tau))`, r = 1..3.
///
/// With zero offset the trajectory vanishes at `tau = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrigTrajectory {
    pub offset: f64,
    pub sin: [f64; 3],
    pub cos: [f64; 3],
}

impl TrigTrajectory {
    pub fn constant(offset: f64) -> Self {
        Self { offset, ..Default::default() }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let mut v = self.offset;
        for r in 0..3 {
            let w = PI * (r + 1) as f64 * tau;
            v += self.sin[r] * w.sin() + self.cos[r] * (1.0 - w.cos());
        }
        v
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self { offset: self.offset * f, sin: self.sin.map(|v| v * f), cos: self.cos.map(|v| v * f) }
    }
}

/// Time-dependent affine map of one control node: `v = (I + G(t)) x + b(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeMotion {
    /// Deviation of the 2x2 matrix from the identity, row-major.
    pub gamma: [TrigTrajectory; 4],
    pub shift: [TrigTrajectory; 2],
}

impl NodeMotion {
    pub fn constant(gamma: [[f64; 2]; 2], shift: (f64, f64)) -> Self {
        Self {
            gamma: [
                TrigTrajectory::constant(gamma[0][0] - 1.0),
                TrigTrajectory::constant(gamma[0][1]),
                TrigTrajectory::constant(gamma[1][0]),
                TrigTrajectory::constant(gamma[1][1] - 1.0),
            ],
            shift: [TrigTrajectory::constant(shift.0), TrigTrajectory::constant(shift.1)],
        }
    }

    fn support_vector(&self, x: f64, y: f64, tau: f64) -> (f64, f64) {
        let g: Vec<f64> = self.gamma.iter().map(|t| t.eval(tau)).collect();
        (
            (1.0 + g[0]) * x + g[1] * y + self.shift[0].eval(tau),
            g[2] * x + (1.0 + g[3]) * y + self.shift[1].eval(tau),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfdSpec {
    /// Control nodes per side; nodes span Ω including its boundary.
    pub m: usize,
    pub order: SplineOrder,
    /// Row-major `m x m` node motions (row index along y).
    pub nodes: Vec<NodeMotion>,
}

impl FfdSpec {
    pub fn uniform(m: usize, order: SplineOrder, node: NodeMotion) -> Self {
        Self { m, order, nodes: vec![node; m * m] }
    }

    /// Coordinate of node index `l` along one axis.
    pub fn node_coord(&self, l: usize, grid: GridSpec) -> f64 {
        -grid.half() + l as f64 * grid.n() as f64 / (self.m - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("FFD control grid needs m >= 2, got {}", self.m)));
        }
        if self.nodes.len() != self.m * self.m {
            return Err(Error::DimensionMismatch(format!(
                "FFD spec has {} nodes, expected {}",
                self.nodes.len(),
                self.m * self.m
            )));
        }
        Ok(())
    }
}

/// Interpolation weights `w[p, l]` of node `l` at pixel `p` along one axis.
fn axis_weights(m: usize, order: SplineOrder, grid: GridSpec) -> Array2<f64> {
    let n = grid.n();
    let spacing = n as f64 / (m - 1) as f64;
    let mut w = Array2::zeros((n, m));
    let second = match order {
        SplineOrder::Cubic if m >= 3 => Some(natural_second_derivative_operator(m, spacing)),
        _ => None,
    };
    for p in 0..n {
        let x = p as f64 + 0.5;
        let cell = ((x / spacing).floor() as usize).min(m - 2);
        let s = x / spacing - cell as f64;
        w[[p, cell]] += 1.0 - s;
        w[[p, cell + 1]] += s;
        if let Some(sigma) = &second {
            let a = spacing * spacing / 6.0 * ((1.0 - s).powi(3) - (1.0 - s));
            let b = spacing * spacing / 6.0 * (s.powi(3) - s);
            for l in 0..m {
                w[[p, l]] += a * sigma[(cell, l)] + b * sigma[(cell + 1, l)];
            }
        }
    }
    w
}

/// Linear map from node values to the second derivatives of the natural
/// cubic interpolating spline.
fn natural_second_derivative_operator(m: usize, h: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    let mut r = DMatrix::zeros(m, m);
    a[(0, 0)] = 1.0;
    a[(m - 1, m - 1)] = 1.0;
    for i in 1..m - 1 {
        a[(i, i - 1)] = 1.0;
        a[(i, i)] = 4.0;
        a[(i, i + 1)] = 1.0;
        let f = 6.0 / (h * h);
        r[(i, i - 1)] = f;
        r[(i, i)] = -2.0 * f;
        r[(i, i + 1)] = f;
    }
    let lu = a.lu();
    let mut out = DMatrix::zeros(m, m);
    for c in 0..m {
        let col: DVector<f64> = r.column(c).into();
        out.set_column(c, &lu.solve(&col).expect("tridiagonal system is diagonally dominant"));
    }
    out
}

/// Field of excitation `t` (of `n_exc`) generated by the FFD.
pub fn synth_ffd(spec: &FfdSpec, t: usize, n_exc: usize, grid: GridSpec) -> Result<DeformationField> {
    spec.validate()?;
    let tau = if n_exc > 1 { t as f64 / (n_exc - 1) as f64 } else { 0.0 };
    let m = spec.m;
    let h = grid.half();
    let mut vx = Array2::zeros((m, m));
    let mut vy = Array2::zeros((m, m));
    for l in 0..m {
        for c in 0..m {
            let (x, y) = (spec.node_coord(c, grid), spec.node_coord(l, grid));
            let (sx, sy) = spec.nodes[l * m + c].support_vector(x, y, tau);
            // tolerance for nodes mapped exactly onto the boundary
            if sx.abs() > h + 1e-9 || sy.abs() > h + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "control node ({l},{c}) maps to ({sx:.3},{sy:.3}) outside the field of view"
                )));
            }
            vx[[l, c]] = sx;
            vy[[l, c]] = sy;
        }
    }
    let w = axis_weights(m, spec.order, grid);
    let px = w.dot(&vx).dot(&w.t());
    let py = w.dot(&vy).dot(&w.t());
    DeformationField::new(px, py)
}
