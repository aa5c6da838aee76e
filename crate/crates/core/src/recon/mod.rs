//! CG-SENSE with motion, per-excitation reconstructions and TV denoising.

mod tv;

pub use tv::{total_variation, tv_denoise, TV_STEP};

use ndarray::{Array2, Zip};

use crate::deform::DeformationSequence;
use crate::error::{Error, Result};
use crate::forward::MotionProblem;
use crate::grid::Image;

/// Halvings tried when a projected step does not decrease the objective.
pub const MAX_BACKTRACK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub cg_iters: usize,
    /// Stop once `‖R‖ <= tol · ‖y‖`.
    pub tol: f64,
    pub positivity: bool,
    /// TV weight of the optional post-denoising; 0 disables it.
    pub tv_lambda: f64,
    pub tv_iters: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { cg_iters: 10, tol: 1e-12, positivity: true, tv_lambda: 0.0, tv_iters: 100 }
    }
}

impl ReconConfig {
    pub fn with_iters(cg_iters: usize) -> Self {
        Self { cg_iters, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cg_iters == 0 {
            return Err(Error::InvalidArgument("cg_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) || !(self.tv_lambda >= 0.0) || !self.tv_lambda.is_finite() {
            return Err(Error::InvalidArgument("tolerance and TV weight must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub s: Image,
    /// `J` at the start and after every iteration.
    pub history: Vec<f64>,
    /// `‖y - 𝒜(U, s)‖` of the returned image.
    pub residual_norm: f64,
    /// Iterations actually performed.
    pub iterations: usize,
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

fn check_finite(j: f64, what: &str) -> Result<f64> {
    if j.is_finite() {
        Ok(j)
    } else {
        Err(Error::NonFinite(format!("CG objective {what}")))
    }
}

/// Zeroes descent components that would push an active bound further out.
fn project_direction(d: &mut Array2<f64>, s: &Array2<f64>) {
    Zip::from(d).and(s).for_each(|d, &s| {
        if s <= 0.0 && *d < 0.0 {
            *d = 0.0;
        }
    });
}

/// Minimizes `‖𝒜(U, s) - y‖²` over `s` (optionally `s >= 0`) by Polak-Ribière
/// nonlinear CG with exact step lengths and projection.
pub fn cg_sense_motion(
    problem: &MotionProblem,
    u: &DeformationSequence,
    s0: &Image,
    cfg: &ReconConfig,
) -> Result<ReconResult> {
    cfg.validate()?;
    if s0.grid() != problem.grid() {
        return Err(Error::DimensionMismatch("initial image grid differs from the problem grid".into()));
    }
    let y_norm = problem.data().norm_sqr().sqrt();
    let mut s = s0.values().clone();
    if cfg.positivity {
        s.mapv_inplace(|v| v.max(0.0));
    }
    let (mut r, j0) = problem.residuum(u, &s)?;
    let mut j = j0;
    let mut history = vec![j];
    // negative half-gradient 𝒜* R
    let mut q = problem.adjoint(&r, u)?;
    let mut d = q.clone();
    if cfg.positivity {
        project_direction(&mut d, &s);
    }
    let mut qq = dot(&q, &q);
    let mut iterations = 0;
    for _ in 0..cfg.cg_iters {
        if j.sqrt() <= cfg.tol * y_norm || qq == 0.0 {
            break;
        }
        let ad = problem.forward(u, &d)?;
        let dad = ad.norm_sqr();
        if dad == 0.0 || !dad.is_finite() {
            break;
        }
        let mut alpha = r.real_dot(&ad) / dad;
        if !(alpha > 0.0) {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut projected = false;
        for _ in 0..=MAX_BACKTRACK {
            let mut trial = &s + &(&d * alpha);
            let clipped = cfg.positivity && trial.iter().any(|&v| v < 0.0);
            let (r_new, j_new) = if clipped {
                trial.mapv_inplace(|v| v.max(0.0));
                problem.residuum(u, &trial)?
            } else {
                let mut r_new = r.clone();
                r_new.add_scaled(-alpha, &ad);
                let j_new = r_new.norm_sqr();
                (r_new, j_new)
            };
            check_finite(j_new, "after step")?;
            if j_new <= j {
                accepted = Some((trial, r_new, j_new));
                projected = clipped;
                break;
            }
            alpha *= 0.5;
        }
        let Some((s_new, r_new, j_new)) = accepted else {
            history.push(j);
            break;
        };
        s = s_new;
        r = r_new;
        j = j_new;
        history.push(j);
        let q_new = problem.adjoint(&r, u)?;
        let qq_new = dot(&q_new, &q_new);
        let beta = if projected || qq == 0.0 {
            0.0
        } else {
            ((qq_new - dot(&q_new, &q)) / qq).max(0.0)
        };
        d = &q_new + &(&d * beta);
        if cfg.positivity {
            project_direction(&mut d, &s);
        }
        q = q_new;
        qq = qq_new;
    }
    let mut s = Image::new(s)?;
    if cfg.tv_lambda > 0.0 {
        s = tv_denoise(&s, cfg.tv_lambda, cfg.tv_iters)?;
    }
    Ok(ReconResult { residual_norm: j.sqrt(), s, history, iterations })
}

/// Static undersampled reconstruction `s_i` from excitation `i` alone
/// (0-based), started from zero.
pub fn per_excitation_recon(problem: &MotionProblem, i: usize, cfg: &ReconConfig) -> Result<Image> {
    if i >= problem.n_exc() {
        return Err(Error::InvalidArgument(format!("excitation {i} out of range 0..{}", problem.n_exc())));
    }
    let sub = problem.select(&[i])?;
    let u = DeformationSequence::identity(problem.grid(), 1);
    Ok(cg_sense_motion(&sub, &u, &Image::zeros(problem.grid()), cfg)?.s)
}

/// All `s_i`, computed in parallel.
pub fn per_excitation_recons(problem: &MotionProblem, cfg: &ReconConfig) -> Result<Vec<Image>> {
    use rayon::prelude::*;
    (0..problem.n_exc()).into_par_iter().map(|i| per_excitation_recon(problem, i, cfg)).collect()
}

/// Objective `‖y - 𝒜(U, s)‖²` of an arbitrary image.
pub fn objective(problem: &MotionProblem, u: &DeformationSequence, s: &Image) -> Result<f64> {
    Ok(problem.residuum(u, s.values())?.1)
}


#[cfg(test)]
mod tests;
