//! Rigid motion baseline: Gauss-Newton on three parameters per excitation,
//! alternating with CG for the image.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::deform::{du_dp_both, DeformationField, DeformationSequence, RigidParams};
use crate::error::{Error, Result};
use crate::forward::MotionProblem;
use crate::grid::Image;
use crate::recon::{cg_sense_motion, ReconConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RigidConfig {
    /// Outer CG + Gauss-Newton rounds.
    pub iters: usize,
    pub cg_iters: usize,
    /// Relative Levenberg damping on the trace of the normal matrix.
    pub damping: f64,
    /// Converged once every update is below `(angle_tol, shift_tol)`.
    pub angle_tol: f64,
    pub shift_tol: f64,
}

impl Default for RigidConfig {
    fn default() -> Self {
        Self { iters: 10, cg_iters: 10, damping: 1e-3, angle_tol: 1e-5, shift_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidResult {
    pub params: Vec<RigidParams>,
    /// Per excitation: the last update met the tolerances.
    pub converged: Vec<bool>,
    /// Per excitation: the damped normal matrix was singular and refinement stopped.
    pub singular: Vec<bool>,
    pub s: Image,
    /// `J` after every round.
    pub history: Vec<f64>,
}

impl RigidResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

pub fn sequence_of(params: &[RigidParams], problem: &MotionProblem) -> Result<DeformationSequence> {
    let g = problem.grid();
    let mut fields = vec![DeformationField::identity(g)];
    fields.extend(params[1..].iter().map(|p| p.field(g)));
    DeformationSequence::new(fields)
}

/// Derivatives of the pull-back targets with respect to `(θ, t_x, t_y)`.
fn target_jacobian(p: &RigidParams, x: f64, y: f64) -> [(f64, f64); 3] {
    let (s, c) = p.theta.sin_cos();
    let (dx, dy) = (x - p.tx, y - p.ty);
    let (px, py) = (c * dx + s * dy, -s * dx + c * dy);
    [(py, -px), (-c, s), (-s, -c)]
}

enum Step {
    Accepted(RigidParams, Vector3<f64>),
    Rejected(Vector3<f64>),
    Singular,
}

fn gauss_newton_step(problem: &MotionProblem, i: usize, p: &RigidParams, s: &Array2<f64>, cfg: &RigidConfig) -> Step {
    let g = problem.grid();
    let field = p.field(g);
    let (du_x, du_y) = du_dp_both(&field, s);
    let mut columns = Vec::with_capacity(3);
    for q in 0..3 {
        let dimg = Array2::from_shape_fn(g.shape(), |(j, k)| {
            let (x, y) = g.coord(j, k);
            let d = target_jacobian(p, x, y)[q];
            du_x[[j, k]] * d.0 + du_y[[j, k]] * d.1
        });
        columns.push(problem.forward_warped(i, &dimg));
    }
    let w = problem.forward_excitation(i, &field, s) - problem.data().block(i);
    let dot = |a: &Array2<Complex64>, b: &Array2<Complex64>| {
        Zip::from(a).and(b).fold(0.0, |acc, u, v| acc + u.re * v.re + u.im * v.im)
    };
    let mut jtj = Matrix3::zeros();
    let mut jtw = Vector3::zeros();
    for a in 0..3 {
        jtw[a] = dot(&columns[a], &w);
        for b in 0..3 {
            jtj[(a, b)] = dot(&columns[a], &columns[b]);
        }
    }
    let mu = cfg.damping * jtj.trace();
    for a in 0..3 {
        jtj[(a, a)] += mu;
    }
    let Some(delta) = jtj.lu().solve(&(-jtw)) else { return Step::Singular };
    if !(mu > 0.0) || delta.iter().any(|v| !v.is_finite()) {
        return Step::Singular;
    }
    let j0 = w.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let mut scale = 1.0;
    for _ in 0..6 {
        let cand = RigidParams::new(p.theta + scale * delta[0], p.tx + scale * delta[1], p.ty + scale * delta[2]);
        if problem.excitation_objective(i, &cand.field(g), s) < j0 {
            return Step::Accepted(cand, delta * scale);
        }
        scale *= 0.5;
    }
    Step::Rejected(delta)
}

/// Refines rigid parameters (`params0[0]` is the fixed reference).
pub fn rigid_refine(problem: &MotionProblem, params0: &[RigidParams], cfg: &RigidConfig) -> Result<RigidResult> {
    if params0.len() != problem.n_exc() {
        return Err(Error::DimensionMismatch("one rigid parameter set per excitation required".into()));
    }
    if params0.iter().any(|p| !(p.theta.is_finite() && p.tx.is_finite() && p.ty.is_finite())) {
        return Err(Error::NonFinite("initial rigid parameters".into()));
    }
    let n_exc = problem.n_exc();
    let mut params = params0.to_vec();
    params[0] = RigidParams::default();
    let mut converged = vec![true; n_exc];
    let mut singular = vec![false; n_exc];
    converged[1..].iter_mut().for_each(|c| *c = false);
    let rc = ReconConfig::with_iters(cfg.cg_iters);
    let mut s = Image::zeros(problem.grid());
    let mut history = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let u = sequence_of(&params, problem)?;
        s = cg_sense_motion(problem, &u, &s, &rc)?.s;
        let steps: Vec<(usize, Step)> = (1..n_exc)
            .into_par_iter()
            .filter(|&i| !singular[i])
            .map(|i| (i, gauss_newton_step(problem, i, &params[i], s.values(), cfg)))
            .collect();
        for (i, step) in steps {
            let small = |d: &Vector3<f64>| d[0].abs() < cfg.angle_tol && d[1].abs() < cfg.shift_tol && d[2].abs() < cfg.shift_tol;
            match step {
                Step::Accepted(p, d) => {
                    params[i] = p;
                    converged[i] = small(&d);
                }
                // no trial decreased J_i: stationary if the proposed step was negligible
                Step::Rejected(d) => {
                    converged[i] = small(&d);
                }
                Step::Singular => {
                    singular[i] = true;
                    converged[i] = false;
                }
            }
        }
        history.push(problem.residuum(&sequence_of(&params, problem)?, s.values())?.1);
        if singular.iter().zip(&converged).skip(1).all(|(&sg, &c)| sg || c) {
            break;
        }
    }
    let u = sequence_of(&params, problem)?;
    let s = cg_sense_motion(problem, &u, &s, &rc)?.s;
    Ok(RigidResult { params, converged, singular, s, history })
}
