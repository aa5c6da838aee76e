//! Multilevel motion correction by preconditioned, projected gradient steps
//! on the data fidelity, and a rigid Gauss-Newton baseline.

mod projector;
mod rigid;

pub use projector::{spline_projection_matrix, IdentityProjector, Projector, SplineProjector};
pub use rigid::{rigid_refine, sequence_of, RigidConfig, RigidResult};

use ndarray::Array2;
use rayon::prelude::*;

use crate::deform::{DeformationField, DeformationSequence};
use crate::error::{Error, Result};
use crate::filters::resample;
use crate::forward::MotionProblem;
use crate::gradients::{grad_excitation, hessian_excitation, regularize};
use crate::grid::{GridSpec, Image};
use crate::recon::{cg_sense_motion, ReconConfig};

/// Problem at resolution `N / 2^h` from the central k-space block.
pub fn crop_kspace(problem: &MotionProblem, h: u32) -> Result<MotionProblem> {
    let f = 1usize << h;
    if !problem.grid().n().is_multiple_of(f) {
        return Err(Error::InvalidArgument(format!("N={} is not divisible by 2^{h}", problem.grid().n())));
    }
    problem.crop(h)
}

/// Field on another grid describing the same physical map; coordinates are
/// scaled by the grid ratio.
pub fn resample_field(u: &DeformationField, to: GridSpec) -> Result<DeformationField> {
    let from = u.grid();
    if from == to {
        return Ok(u.clone());
    }
    let ratio = to.n() as f64 / from.n() as f64;
    let (dx, dy) = u.displacement();
    DeformationField::from_displacement(to, &(resample(&dx, to.n()) * ratio), &(resample(&dy, to.n()) * ratio))
}

pub fn resample_sequence(u: &DeformationSequence, to: GridSpec) -> Result<DeformationSequence> {
    let mut fields = vec![DeformationField::identity(to)];
    for f in &u.fields()[1..] {
        fields.push(resample_field(f, to)?);
    }
    DeformationSequence::new(fields)
}

/// Bilinear resampling of an image to another grid.
pub fn resample_image(s: &Image, to: GridSpec) -> Result<Image> {
    Image::new(resample(s.values(), to.n()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionConfig {
    /// Coarsest level `L`; levels run from `L` down to 0.
    pub levels: u32,
    /// Rounds per level.
    pub iters: usize,
    pub cg_iters: usize,
    pub step: StepRule,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self { levels: 2, iters: 2, cg_iters: 10, step: StepRule::default() }
    }
}

impl CorrectionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.iters == 0 || self.cg_iters == 0 {
            return Err(Error::InvalidArgument("correction iterations must be at least 1".into()));
        }
        let coarse = n >> self.levels;
        if coarse << self.levels != n || coarse < 8 {
            return Err(Error::InvalidArgument(format!("N={n} cannot be coarsened {} times", self.levels)));
        }
        Ok(())
    }
}

/// Objective trace of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionRound {
    pub level: u32,
    /// `J` after the CG update of `s`, before the motion step.
    pub j_before: f64,
    /// `J` after the accepted motion steps.
    pub j_after: f64,
    /// Excitations whose step was accepted.
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub u: DeformationSequence,
    pub s: Image,
    /// `J` at full resolution for the initial motion and its CG image.
    pub initial_j: f64,
    /// `J` at full resolution for the returned motion and image.
    pub final_j: f64,
    pub rounds: Vec<CorrectionRound>,
    pub levels: Vec<LevelOutcome>,
}

/// Full-resolution check of one level's motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOutcome {
    pub level: u32,
    /// `J` at full resolution with the level's motion after a CG update.
    pub j: f64,
    /// Whether the motion was kept; the finest level is always kept.
    pub kept: bool,
}

/// Step length control for the motion steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRule {
    /// Halvings of the unit step before the excitation is skipped for the round.
    pub backtrack: usize,
    /// Doublings tried after the unit step is accepted, while `J_i` keeps decreasing.
    pub expand: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self { backtrack: 5, expand: 4 }
    }
}

/// One preconditioned, projected step for excitation `i`.
/// Returns the new field and its objective, or `None` if no trial decreased `J_i`.
fn excitation_step(
    problem: &MotionProblem,
    i: usize,
    u: &DeformationField,
    s: &Array2<f64>,
    h: u32,
    rule: StepRule,
    projector: &dyn Projector,
) -> Result<Option<(DeformationField, f64)>> {
    let j0 = problem.excitation_objective(i, u, s);
    let (gx, gy) = grad_excitation(problem, i, u, s);
    let (hx, hy) = hessian_excitation(problem, i, u, s);
    let (stepx, stepy) = (&gx / &regularize(&hx), &gy / &regularize(&hy));
    let (dx, dy) = u.displacement();
    let g = u.grid();
    let trial = |alpha: f64| -> Result<(DeformationField, f64)> {
        let (px, py) = projector.project(&(&dx - &(&stepx * alpha)), &(&dy - &(&stepy * alpha)), h)?;
        let cand = DeformationField::from_displacement(g, &px, &py)?;
        let j = problem.excitation_objective(i, &cand, s);
        if !j.is_finite() {
            return Err(Error::NonFinite(format!("objective of excitation {i} at level {h}")));
        }
        Ok((cand, j))
    };
    let mut alpha = 1.0;
    for _ in 0..=rule.backtrack {
        let (cand, j) = trial(alpha)?;
        if j < j0 {
            let mut best = (cand, j);
            if alpha == 1.0 {
                for _ in 0..rule.expand {
                    alpha *= 2.0;
                    let next = trial(alpha)?;
                    if next.1 >= best.1 {
                        break;
                    }
                    best = next;
                }
            }
            return Ok(Some(best));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// One round of motion steps at fixed `s`: every excitation `i >= 1` moves
/// independently; the reference excitation stays the identity.
pub fn motion_round(
    problem: &MotionProblem,
    u: &DeformationSequence,
    s: &Image,
    h: u32,
    rule: StepRule,
    projector: &dyn Projector,
) -> Result<(DeformationSequence, usize)> {
    let steps: Vec<_> = (1..u.len())
        .into_par_iter()
        .map(|i| excitation_step(problem, i, u.get(i), s.values(), h, rule, projector))
        .collect::<Result<_>>()?;
    let mut out = u.clone();
    let mut accepted = 0;
    for (m, step) in steps.into_iter().enumerate() {
        if let Some((f, _)) = step {
            out.set(m + 1, f)?;
            accepted += 1;
        }
    }
    Ok((out, accepted))
}

/// Multilevel correction of `u_est`; returns the finest-level motion and the
/// final CG image.
///
/// The motion found on a coarse level is kept only if, after upsampling and a
/// CG update of the image, it lowers the full-resolution objective.
pub fn correct_motion(
    problem: &MotionProblem,
    u_est: &DeformationSequence,
    cfg: &CorrectionConfig,
    projector: &dyn Projector,
) -> Result<CorrectionResult> {
    let n = problem.grid().n();
    cfg.validate(n)?;
    if u_est.len() != problem.n_exc() || u_est.grid() != problem.grid() {
        return Err(Error::DimensionMismatch("initial motion does not match the problem".into()));
    }
    let rc = ReconConfig { cg_iters: cfg.cg_iters, ..ReconConfig::default() };
    let initial = cg_sense_motion(problem, u_est, &Image::zeros(problem.grid()), &rc)?;
    let initial_j = initial.residual_norm.powi(2);

    let mut u = u_est.clone();
    let mut s = initial.s;
    let mut j = initial_j;
    let mut rounds = Vec::new();
    let mut levels = Vec::new();
    for h in (0..=cfg.levels).rev() {
        let p = crop_kspace(problem, h)?;
        let g = p.grid();
        let mut u_h = resample_sequence(&u, g)?;
        let mut s_h = resample_image(&s, g)?;
        for _ in 0..cfg.iters {
            let rec = cg_sense_motion(&p, &u_h, &s_h, &rc)?;
            s_h = rec.s;
            let j_before = rec.residual_norm.powi(2);
            let (next, accepted) = motion_round(&p, &u_h, &s_h, h, cfg.step, projector)?;
            u_h = next;
            let j_after = p.residuum(&u_h, s_h.values())?.1;
            rounds.push(CorrectionRound { level: h, j_before, j_after, accepted });
        }
        let cand = resample_sequence(&u_h, problem.grid())?;
        let start = if h == 0 { s_h } else { s.clone() };
        let rec = cg_sense_motion(problem, &cand, &start, &rc)?;
        let j_cand = rec.residual_norm.powi(2);
        let keep = h == 0 || j_cand < j;
        if keep {
            u = cand;
            s = rec.s;
            j = j_cand;
        }
        levels.push(LevelOutcome { level: h, j: j_cand, kept: keep });
    }
    Ok(CorrectionResult { u, s, initial_j, final_j: j, rounds, levels })
}

#[cfg(test)]
mod tests;
