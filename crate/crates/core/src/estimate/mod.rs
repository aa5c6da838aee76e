//! First motion estimate from the per-excitation reconstructions: repeated
//! registration of the warped reference image to each `s_i`, then a temporal
//! smoothing pass over the excitation index.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::deform::{apply, Axis, DeformationField, DeformationSequence};
use crate::error::{Error, Result};
use crate::filters::{block_average, central_gradient, gaussian_blur, resample};
use crate::grid::Image;
use crate::interp::sample_clamped;

/// Parameters of the classical multiresolution registration.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerConfig {
    /// Pyramid levels; level `l` works on `N / 2^l` pixels.
    pub levels: usize,
    /// Gaussian pre-smoothing on every level, in pixels of that level.
    pub smoothing: f64,
    /// Relinearizations per level.
    pub warps: usize,
    /// Gauss-Seidel sweeps per relinearization.
    pub sweeps: usize,
    /// Weight of the smoothness penalty on the non-affine part, for images
    /// scaled to unit peak.
    pub lambda: f64,
    /// Gauss-Newton iterations of the affine stage per level.
    pub affine_iters: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { levels: 3, smoothing: 1.0, warps: 5, sweeps: 40, lambda: 0.02, affine_iters: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    /// Outer registration rounds.
    pub iters: usize,
    pub refiner: RefinerConfig,
    /// Half-width of the temporal regression window; 0 disables the pass.
    pub temporal_half_width: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { iters: 4, refiner: RefinerConfig::default(), temporal_half_width: 2 }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.refiner;
        if self.iters == 0 || r.levels == 0 || r.warps == 0 {
            return Err(Error::InvalidArgument("estimate iterations and pyramid levels must be at least 1".into()));
        }
        if !(r.lambda > 0.0 && r.lambda.is_finite()) || !(r.smoothing >= 0.0) {
            return Err(Error::InvalidArgument("refiner smoothness weight must be positive".into()));
        }
        Ok(())
    }
}

/// Additive update of a pull-back field such that `warped` moved by it
/// matches `target`. Identical inputs must give a zero update.
pub trait Refiner: Sync {
    fn refine(&self, warped: &Image, target: &Image) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// Coarse-to-fine SSD registration with a quadratic smoothness penalty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassicalRefiner {
    pub cfg: RefinerConfig,
}

impl Refiner for ClassicalRefiner {
    fn refine(&self, warped: &Image, target: &Image) -> Result<(Array2<f64>, Array2<f64>)> {
        classical_refiner(warped, target, &self.cfg)
    }
}

/// Global affine displacement `d = (a0 + a1 x + a2 y, a3 + a4 x + a5 y)` in
/// level pixels, coordinates relative to the array center.
fn affine_field(a: &[f64; 6], m: usize) -> (Array2<f64>, Array2<f64>) {
    let c = (m as f64 - 1.0) / 2.0;
    let dx = Array2::from_shape_fn((m, m), |(j, k)| a[0] + a[1] * (k as f64 - c) + a[2] * (j as f64 - c));
    let dy = Array2::from_shape_fn((m, m), |(j, k)| a[3] + a[4] * (k as f64 - c) + a[5] * (j as f64 - c));
    (dx, dy)
}

/// Linearization of `w(x + d(x)) - t(x)`: sampled gradients and residual.
fn linearize(
    w: &Array2<f64>,
    grads: &(Array2<f64>, Array2<f64>),
    t: &Array2<f64>,
    dx: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = w.nrows();
    let mut gx = Array2::zeros((n, n));
    let mut gy = Array2::zeros((n, n));
    let mut r = Array2::zeros((n, n));
    for j in 0..n {
        for k in 0..n {
            let (fj, fk) = (j as f64 + dy[[j, k]], k as f64 + dx[[j, k]]);
            gx[[j, k]] = sample_clamped(&grads.1, fj, fk);
            gy[[j, k]] = sample_clamped(&grads.0, fj, fk);
            r[[j, k]] = sample_clamped(w, fj, fk) - t[[j, k]];
        }
    }
    (gx, gy, r)
}

/// Damped Gauss-Newton on the six affine parameters.
fn affine_level(w: &Array2<f64>, t: &Array2<f64>, a: &mut [f64; 6], cfg: &RefinerConfig) {
    let m = w.nrows();
    let c = (m as f64 - 1.0) / 2.0;
    let grads = central_gradient(w);
    let ssd = |a: &[f64; 6]| {
        let (dx, dy) = affine_field(a, m);
        linearize(w, &grads, t, &dx, &dy)
    };
    let (mut gx, mut gy, mut r) = ssd(a);
    for _ in 0..cfg.affine_iters {
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = nalgebra::Vector6::<f64>::zeros();
        for j in 0..m {
            for k in 0..m {
                let (x, y) = (k as f64 - c, j as f64 - c);
                let (ax, ay) = (gx[[j, k]], gy[[j, k]]);
                let row = nalgebra::Vector6::new(ax, ax * x, ax * y, ay, ay * x, ay * y);
                jtj += row * row.transpose();
                jtr += row * r[[j, k]];
            }
        }
        let damping = 1e-6 * jtj.trace().max(f64::MIN_POSITIVE);
        for d in 0..6 {
            jtj[(d, d)] += damping;
        }
        let Some(step) = jtj.lu().solve(&jtr) else { return };
        if step.iter().any(|v| !v.is_finite()) {
            return;
        }
        let current = r.mapv(|v| v * v).sum();
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..4 {
            let mut trial = *a;
            for d in 0..6 {
                trial[d] -= scale * step[d];
            }
            let next = ssd(&trial);
            if next.2.mapv(|v| v * v).sum() < current {
                *a = trial;
                (gx, gy, r) = next;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            return;
        }
    }
}

/// Penalized dense refinement of `e = d - base` on one level.
fn dense_level(
    w: &Array2<f64>,
    t: &Array2<f64>,
    base: &(Array2<f64>, Array2<f64>),
    ex: &mut Array2<f64>,
    ey: &mut Array2<f64>,
    cfg: &RefinerConfig,
) {
    let n = w.nrows();
    let grads = central_gradient(w);
    for _ in 0..cfg.warps {
        let (dx, dy) = (&*ex + &base.0, &*ey + &base.1);
        let (gx, gy, r) = linearize(w, &grads, t, &dx, &dy);
        // residual linearized in e: r + g · (e_new - e)
        let b = Zip::from(&r).and(&gx).and(&gy).and(&*ex).and(&*ey).map_collect(|&r, &ax, &ay, &x, &y| r - ax * x - ay * y);
        for _ in 0..cfg.sweeps {
            for j in 0..n {
                for k in 0..n {
                    let mut sx = 0.0;
                    let mut sy = 0.0;
                    let mut count = 0.0;
                    for (a, c) in [(j.wrapping_sub(1), k), (j + 1, k), (j, k.wrapping_sub(1)), (j, k + 1)] {
                        if a < n && c < n {
                            sx += ex[[a, c]];
                            sy += ey[[a, c]];
                            count += 1.0;
                        }
                    }
                    let (mx, my) = (sx / count, sy / count);
                    let (ax, ay) = (gx[[j, k]], gy[[j, k]]);
                    let f = (ax * mx + ay * my + b[[j, k]]) / (cfg.lambda * count + ax * ax + ay * ay);
                    ex[[j, k]] = mx - ax * f;
                    ey[[j, k]] = my - ay * f;
                }
            }
        }
    }
}

/// One multiresolution registration pass of `warped` onto `target`: a global
/// affine alignment followed by a penalized dense correction. Returns the
/// displacement `(d^x, d^y)` in pixels to add to the pull-back field.
pub fn classical_refiner(warped: &Image, target: &Image, cfg: &RefinerConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    if warped.grid() != target.grid() {
        return Err(Error::DimensionMismatch("refiner images on different grids".into()));
    }
    let n = warped.grid().n();
    if warped.values() == target.values() {
        return Ok((Array2::zeros((n, n)), Array2::zeros((n, n))));
    }
    let scale = warped.values().iter().chain(target.values().iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if scale > 0.0 { 1.0 / scale } else { 1.0 };
    let mut pyramid = vec![(warped.values() * scale, target.values() * scale)];
    for _ in 1..cfg.levels {
        let (w, t) = pyramid.last().expect("non-empty");
        if w.nrows() < 16 || w.nrows() % 2 != 0 {
            break;
        }
        pyramid.push((block_average(w, 2), block_average(t, 2)));
    }
    let pyramid: Vec<_> =
        pyramid.into_iter().map(|(w, t)| (gaussian_blur(&w, cfg.smoothing), gaussian_blur(&t, cfg.smoothing))).collect();

    let mut a = [0.0; 6];
    for (level, (w, t)) in pyramid.iter().enumerate().rev() {
        if level + 1 < pyramid.len() {
            a[0] *= 2.0;
            a[3] *= 2.0;
        }
        affine_level(w, t, &mut a, cfg);
    }

    let coarsest = pyramid.last().expect("non-empty").0.nrows();
    let mut ex = Array2::zeros((coarsest, coarsest));
    let mut ey = Array2::zeros((coarsest, coarsest));
    let levels = pyramid.len();
    let mut base = affine_field(&a, n);
    for (level, (w, t)) in pyramid.iter().enumerate().rev() {
        let m = w.nrows();
        if ex.nrows() != m {
            let f = m as f64 / ex.nrows() as f64;
            ex = resample(&ex, m) * f;
            ey = resample(&ey, m) * f;
        }
        let f = (1usize << level) as f64;
        let level_affine = [a[0] / f, a[1], a[2], a[3] / f, a[4], a[5]];
        base = affine_field(&level_affine, m);
        if cfg.lambda.is_finite() && levels > 0 {
            dense_level(w, t, &base, &mut ex, &mut ey, cfg);
        }
    }
    let (dx, dy) = (&ex + &base.0, &ey + &base.1);
    if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("registration update".into()));
    }
    Ok((dx, dy))
}

/// Diagnostics of one outer round.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRound {
    /// RMS length of the updates over pixels and excitations `1..`.
    pub update_rms: f64,
}

/// Linear smoother rows `c[i][j]`: local quadratic fit over
/// `|j - i| <= half_width`, evaluated at `i`.
fn temporal_weights(n: usize, half_width: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width).min(n - 1);
            let ts: Vec<f64> = (lo..=hi).map(|j| j as f64 - i as f64).collect();
            let degree = (ts.len() - 1).min(2);
            let basis = |t: f64| [1.0, t, t * t];
            let mut gram = Matrix3::zeros();
            for &t in &ts {
                let v = basis(t);
                for a in 0..=degree {
                    for b in 0..=degree {
                        gram[(a, b)] += v[a] * v[b];
                    }
                }
            }
            for a in degree + 1..3 {
                gram[(a, a)] = 1.0;
            }
            let e0 = Vector3::new(1.0, 0.0, 0.0);
            let coef = gram.lu().solve(&e0).expect("Vandermonde normal matrix is regular");
            let mut row = vec![0.0; n];
            for (&t, j) in ts.iter().zip(lo..=hi) {
                let v = basis(t);
                row[j] = (0..=degree).map(|a| coef[a] * v[a]).sum();
            }
            row
        })
        .collect()
}

/// Smooths the displacement trajectories over the excitation index; the
/// reference field stays the identity.
pub fn temporal_smooth(u: &DeformationSequence, half_width: usize) -> Result<DeformationSequence> {
    if half_width == 0 || u.len() < 3 {
        return Ok(u.clone());
    }
    let g = u.grid();
    let disp: Vec<(Array2<f64>, Array2<f64>)> = u.fields().iter().map(|f| f.displacement()).collect();
    let weights = temporal_weights(u.len(), half_width);
    let mut fields = vec![DeformationField::identity(g)];
    for row in weights.iter().skip(1) {
        let mut dx = Array2::zeros(g.shape());
        let mut dy = Array2::zeros(g.shape());
        for (j, &c) in row.iter().enumerate() {
            if c != 0.0 {
                dx.scaled_add(c, &disp[j].0);
                dy.scaled_add(c, &disp[j].1);
            }
        }
        fields.push(DeformationField::from_displacement(g, &dx, &dy)?);
    }
    DeformationSequence::new(fields)
}

/// `U^est` starting from the identity sequence.
pub fn estimate_motion(s_list: &[Image], cfg: &EstimateConfig, refiner: &dyn Refiner) -> Result<DeformationSequence> {
    let n = s_list.first().map(|s| s.grid()).ok_or_else(|| Error::InvalidArgument("no images".into()))?;
    Ok(estimate_motion_from(s_list, &DeformationSequence::identity(n, s_list.len()), cfg, refiner)?.0)
}

/// Registration rounds from an initial sequence, with per-round diagnostics.
pub fn estimate_motion_from(
    s_list: &[Image],
    init: &DeformationSequence,
    cfg: &EstimateConfig,
    refiner: &dyn Refiner,
) -> Result<(DeformationSequence, Vec<EstimateRound>)> {
    cfg.validate()?;
    if s_list.len() < 2 {
        return Err(Error::InvalidArgument("motion estimation needs at least two excitations".into()));
    }
    let g = s_list[0].grid();
    if s_list.iter().any(|s| s.grid() != g) || init.len() != s_list.len() || init.grid() != g {
        return Err(Error::DimensionMismatch("excitation images and initial motion disagree".into()));
    }
    let reference = &s_list[0];
    let mut u = init.clone();
    let mut rounds = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let updates: Vec<(Array2<f64>, Array2<f64>)> = (1..s_list.len())
            .into_par_iter()
            .map(|i| {
                let warped = apply(u.get(i), reference)?;
                refiner.refine(&warped, &s_list[i])
            })
            .collect::<Result<_>>()?;
        let mut energy = 0.0;
        for (i, (dx, dy)) in updates.into_iter().enumerate().map(|(m, d)| (m + 1, d)) {
            if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("refiner update of excitation {i}")));
            }
            energy += Zip::from(&dx).and(&dy).fold(0.0, |a, &x, &y| a + x * x + y * y);
            let mut f = u.get(i).clone();
            *f.param_mut(Axis::X) += &dx;
            *f.param_mut(Axis::Y) += &dy;
            u.set(i, f)?;
        }
        let count = ((s_list.len() - 1) * g.len()) as f64;
        rounds.push(EstimateRound { update_rms: (energy / count).sqrt() });
    }
    Ok((temporal_smooth(&u, cfg.temporal_half_width)?, rounds))
}
