//! Derivatives of the data fidelity `J(U) = ‖𝒜(U, s) - y‖²` with respect to
//! the per-pixel deformation parameters, and the diagonal preconditioner.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::deform::{du_dp_both, Axis, DeformationField, DeformationSequence};
use crate::error::{Error, Result};
use crate::forward::MotionProblem;
use crate::grid::Image;

/// Fraction of the largest diagonal entry added as regularization.
pub const HESSIAN_FLOOR: f64 = 0.05;

/// `∂J/∂p_i^x` and `∂J/∂p_i^y` for every excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub x: Vec<Array2<f64>>,
    pub y: Vec<Array2<f64>>,
}

impl GradientField {
    pub fn n_exc(&self) -> usize {
        self.x.len()
    }

    pub fn get(&self, i: usize, axis: Axis) -> &Array2<f64> {
        match axis {
            Axis::X => &self.x[i],
            Axis::Y => &self.y[i],
        }
    }

    /// Sets the blocks of excitation `i` to zero.
    pub fn zero_excitation(&mut self, i: usize) {
        self.x[i].fill(0.0);
        self.y[i].fill(0.0);
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

/// Per-excitation `κ_i` and the diagonal Hessian fields, raw and regularized.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianInfo {
    pub kappa: Vec<f64>,
    pub diag_x: Vec<Array2<f64>>,
    pub diag_y: Vec<Array2<f64>>,
    /// `H̄ = diag + 0.05 · max(diag)`.
    pub reg_x: Vec<Array2<f64>>,
    pub reg_y: Vec<Array2<f64>>,
}

impl HessianInfo {
    pub fn reg(&self, i: usize, axis: Axis) -> &Array2<f64> {
        match axis {
            Axis::X => &self.reg_x[i],
            Axis::Y => &self.reg_y[i],
        }
    }
}

fn check(problem: &MotionProblem, u: &DeformationSequence, s: &Image) -> Result<()> {
    if u.len() != problem.n_exc() || u.grid() != problem.grid() || s.grid() != problem.grid() {
        return Err(Error::DimensionMismatch("motion, image and problem dimensions differ".into()));
    }
    Ok(())
}

/// Gradient blocks of one excitation:
/// `2 · ∂U_i[s]/∂p ⊙ Re Σ_c S_c^* F^* A_i^* w_{i,c}` with `w = 𝒜_i(U_i, s) - y_i`.
pub fn grad_excitation(
    problem: &MotionProblem,
    i: usize,
    u: &DeformationField,
    s: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let w = problem.forward_excitation(i, u, s) - problem.data().block(i);
    let back = problem.backproject(i, &w);
    let (dx, dy) = du_dp_both(u, s);
    (
        Zip::from(&dx).and(&back).map_collect(|&d, &b| 2.0 * d * b),
        Zip::from(&dy).and(&back).map_collect(|&d, &b| 2.0 * d * b),
    )
}

pub fn grad_u(problem: &MotionProblem, u: &DeformationSequence, s: &Image) -> Result<GradientField> {
    check(problem, u, s)?;
    let blocks: Vec<_> =
        (0..problem.n_exc()).into_par_iter().map(|i| grad_excitation(problem, i, u.get(i), s.values())).collect();
    let (x, y) = blocks.into_iter().unzip();
    Ok(GradientField { x, y })
}

/// Unregularized diagonal `2 κ_i Σ_c |S_c|² (∂U_i[s]/∂p)²` of one excitation.
pub fn hessian_excitation(
    problem: &MotionProblem,
    i: usize,
    u: &DeformationField,
    s: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let weight = problem.coils().sum_of_squares() * (2.0 * problem.kappa(i));
    let (dx, dy) = du_dp_both(u, s);
    (
        Zip::from(&dx).and(&weight).map_collect(|&d, &w| w * d * d),
        Zip::from(&dy).and(&weight).map_collect(|&d, &w| w * d * d),
    )
}

/// `diag + 0.05 · max(diag)`; an all-zero diagonal gets the smallest positive floor.
pub fn regularize(diag: &Array2<f64>) -> Array2<f64> {
    let max = diag.iter().copied().fold(0.0f64, f64::max);
    let floor = (HESSIAN_FLOOR * max).max(f64::MIN_POSITIVE);
    diag.mapv(|v| v + floor)
}

pub fn hessian_diag(problem: &MotionProblem, u: &DeformationSequence, s: &Image) -> Result<HessianInfo> {
    check(problem, u, s)?;
    let blocks: Vec<_> =
        (0..problem.n_exc()).into_par_iter().map(|i| hessian_excitation(problem, i, u.get(i), s.values())).collect();
    let (diag_x, diag_y): (Vec<_>, Vec<_>) = blocks.into_iter().unzip();
    Ok(HessianInfo {
        kappa: (0..problem.n_exc()).map(|i| problem.kappa(i)).collect(),
        reg_x: diag_x.iter().map(regularize).collect(),
        reg_y: diag_y.iter().map(regularize).collect(),
        diag_x,
        diag_y,
    })
}

/// Entrywise `H̄^{-1} g`.
pub fn precondition(g: &GradientField, h: &HessianInfo) -> Result<GradientField> {
    if g.n_exc() != h.reg_x.len() || g.x.iter().zip(&h.reg_x).any(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::DimensionMismatch("gradient and Hessian shapes differ".into()));
    }
    let div = |a: &Vec<Array2<f64>>, b: &Vec<Array2<f64>>| a.iter().zip(b).map(|(a, b)| a / b).collect();
    Ok(GradientField { x: div(&g.x, &h.reg_x), y: div(&g.y, &h.reg_y) })
}

/// Relative difference between the analytic derivative at one parameter and
/// its central finite difference with step `h` pixels.
pub fn fd_check(
    problem: &MotionProblem,
    u: &DeformationSequence,
    s: &Image,
    i: usize,
    pixel: (usize, usize),
    axis: Axis,
    h: f64,
) -> Result<f64> {
    check(problem, u, s)?;
    let n = problem.grid().n();
    if i >= problem.n_exc() || pixel.0 >= n || pixel.1 >= n || !(h > 0.0) {
        return Err(Error::InvalidArgument("fd_check pixel, excitation or step out of range".into()));
    }
    let (gx, gy) = grad_excitation(problem, i, u.get(i), s.values());
    let analytic = match axis {
        Axis::X => gx[pixel],
        Axis::Y => gy[pixel],
    };
    let numeric = central_difference(problem, i, u.get(i), s.values(), pixel, axis, h);
    Ok((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12))
}

/// `(J_i(p + h e) - J_i(p - h e)) / 2h` at one parameter.
pub fn central_difference(
    problem: &MotionProblem,
    i: usize,
    u: &DeformationField,
    s: &Array2<f64>,
    pixel: (usize, usize),
    axis: Axis,
    h: f64,
) -> f64 {
    let shifted = |delta: f64| {
        let mut f = u.clone();
        f.param_mut(axis)[pixel] += delta;
        problem.excitation_objective(i, &f, s)
    };
    (shifted(h) - shifted(-h)) / (2.0 * h)
}

/// `(J_i(p + h e) - 2 J_i(p) + J_i(p - h e)) / h²` at one parameter.
pub fn second_difference(
    problem: &MotionProblem,
    i: usize,
    u: &DeformationField,
    s: &Array2<f64>,
    pixel: (usize, usize),
    axis: Axis,
    h: f64,
) -> f64 {
    let shifted = |delta: f64| {
        let mut f = u.clone();
        f.param_mut(axis)[pixel] += delta;
        problem.excitation_objective(i, &f, s)
    };
    (shifted(h) - 2.0 * shifted(0.0) + shifted(-h)) / (h * h)
}
