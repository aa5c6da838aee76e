//! Image quality, deformation error and residual measures.

use ndarray::Array2;

use crate::deform::DeformationSequence;
use crate::error::{Error, Result};
use crate::filters::gaussian_taps;
use crate::forward::MotionProblem;
use crate::grid::Image;
use crate::recon::{cg_sense_motion, ReconConfig};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// CG iterations for the static best fit.
pub const STATIC_CG_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    /// Peak signal to noise ratio in dB; `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    /// Plain mean squared error times 100.
    pub mse: f64,
}

impl ImageMetrics {
    pub fn psnr_is_infinite(&self) -> bool {
        self.psnr.is_infinite()
    }

    /// `psnr == 10 log10(range² · 100 / mse)` up to rounding.
    pub fn is_consistent(&self, range: f64) -> bool {
        if self.mse == 0.0 {
            return self.psnr == f64::INFINITY;
        }
        let expected = 10.0 * (range * range * 100.0 / self.mse).log10();
        (expected - self.psnr).abs() <= 1e-9 * expected.abs().max(1.0)
    }
}

fn check_pair(test: &Image, reference: &Image, range: f64) -> Result<()> {
    if test.grid() != reference.grid() {
        return Err(Error::DimensionMismatch(format!(
            "images of size {} and {}",
            test.grid().n(),
            reference.grid().n()
        )));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidArgument(format!("data range must be positive, got {range}")));
    }
    Ok(())
}

pub fn image_metrics(test: &Image, reference: &Image, range: f64) -> Result<ImageMetrics> {
    check_pair(test, reference, range)?;
    let diff = test.values() - reference.values();
    let plain = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    let psnr = if plain == 0.0 { f64::INFINITY } else { 10.0 * (range * range / plain).log10() };
    Ok(ImageMetrics { psnr, ssim: ssim(test, reference, range)?, mse: 100.0 * plain })
}

/// Separable Gaussian filtering keeping only positions where the window fits.
fn filter_valid(a: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (r, c) = a.dim();
    let w = taps.len();
    let rows = Array2::from_shape_fn((r, c + 1 - w), |(j, k)| (0..w).map(|t| taps[t] * a[[j, k + t]]).sum::<f64>());
    Array2::from_shape_fn((r + 1 - w, c + 1 - w), |(j, k)| (0..w).map(|t| taps[t] * rows[[j + t, k]]).sum::<f64>())
}

/// Mean structural similarity with an 11x11 Gaussian window (σ = 1.5) over
/// all positions where the window fits; grids narrower than the window use
/// the largest odd window that fits.
pub fn ssim(a: &Image, b: &Image, range: f64) -> Result<f64> {
    check_pair(a, b, range)?;
    let n = a.grid().n();
    let w = SSIM_WINDOW.min(if n.is_multiple_of(2) { n - 1 } else { n });
    let taps = gaussian_taps(SSIM_SIGMA, w / 2);
    let (x, y) = (a.values(), b.values());
    let mx = filter_valid(x, &taps);
    let my = filter_valid(y, &taps);
    let sxx = filter_valid(&(x * x), &taps) - &mx * &mx;
    let syy = filter_valid(&(y * y), &taps) - &my * &my;
    let sxy = filter_valid(&(x * y), &taps) - &mx * &my;
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mut acc = 0.0;
    ndarray::Zip::from(&mx).and(&my).and(&sxx).and(&syy).and(&sxy).for_each(|&mx, &my, &sxx, &syy, &sxy| {
        acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    });
    Ok(acc / mx.len() as f64)
}

/// RMS length of the coordinate error over masked pixels and excitations
/// `1..N_exc` (the reference excitation is excluded).
pub fn deformation_rmse(u: &DeformationSequence, u_ref: &DeformationSequence, mask: &Array2<bool>) -> Result<f64> {
    if u.len() != u_ref.len() || u.grid() != u_ref.grid() {
        return Err(Error::DimensionMismatch("deformation sequences differ in shape".into()));
    }
    u.grid().check_shape(mask, "mask")?;
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidArgument("deformation error mask is empty".into()));
    }
    if u.len() < 2 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (a, b) in u.fields()[1..].iter().zip(&u_ref.fields()[1..]) {
        ndarray::Zip::from(mask).and(a.px()).and(a.py()).and(b.px()).and(b.py()).for_each(|&m, ax, ay, bx, by| {
            if m {
                acc += (ax - bx).powi(2) + (ay - by).powi(2);
            }
        });
    }
    Ok((acc / (count * (u.len() - 1)) as f64).sqrt())
}

/// Residual `J` of the best motion-free fit: unconstrained CG from zero with
/// [`STATIC_CG_ITERS`] iterations.
pub fn static_incompatibility(problem: &MotionProblem) -> Result<f64> {
    let cfg = ReconConfig { cg_iters: STATIC_CG_ITERS, positivity: false, tol: 0.0, ..ReconConfig::default() };
    let id = DeformationSequence::identity(problem.grid(), problem.n_exc());
    let r = cg_sense_motion(problem, &id, &Image::zeros(problem.grid()), &cfg)?;
    Ok(r.residual_norm.powi(2))
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// `J = ‖R‖²` for the evaluated motion and image.
    pub res: f64,
    pub image: ImageMetrics,
    /// Support-masked deformation RMSE in pixels, when a reference motion exists.
    pub deformation_rmse: Option<f64>,
    pub static_incompatibility: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{synth_rigid, DeformationField};
    use crate::grid::GridSpec;
    use crate::phantom::{make_phantom, PhantomKind};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random_image(n: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        Image::new(Array2::from_shape_fn((n, n), |_| rng.uniform(0.0, 1.0))).unwrap()
    }

    /// Direct per-position SSIM with an explicit 2D window.
    fn ssim_direct(a: &Image, b: &Image, range: f64) -> f64 {
        let n = a.grid().n();
        let w = 11;
        let r = 5i64;
        let mut win = Array2::from_shape_fn((w, w), |(j, k)| {
            let (dj, dk) = (j as f64 - 5.0, k as f64 - 5.0);
            (-(dj * dj + dk * dk) / (2.0 * 1.5 * 1.5)).exp()
        });
        let s = win.sum();
        win.mapv_inplace(|v| v / s);
        let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for j in r as usize..n - r as usize {
            for k in r as usize..n - r as usize {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for p in 0..w {
                    for q in 0..w {
                        let (x, y) = (a.values()[[j + p - 5, k + q - 5]], b.values()[[j + p - 5, k + q - 5]]);
                        let g = win[[p, q]];
                        mx += g * x;
                        my += g * y;
                        xx += g * x * x;
                        yy += g * y * y;
                        xy += g * x * y;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                cnt += 1.0;
            }
        }
        acc / cnt
    }

    #[test]
    fn identical_images() {
        let a = make_phantom(PhantomKind::SheppLogan, GridSpec::new(32).unwrap());
        let m = image_metrics(&a, &a, 1.0).unwrap();
        assert!(m.psnr_is_infinite());
        assert_eq!(m.mse, 0.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert!(m.is_consistent(1.0));
    }

    #[test]
    fn constant_offset_closed_form() {
        let g = GridSpec::new(16).unwrap();
        let m = image_metrics(&Image::constant(g, 0.1), &Image::zeros(g), 1.0).unwrap();
        assert!((m.mse / 100.0 - 0.01).abs() < 1e-15);
        assert!((m.psnr - 20.0).abs() < 1e-12);
        assert!(m.is_consistent(1.0));
    }

    #[test]
    fn ssim_matches_direct_window() {
        let (a, b) = (random_image(24, 1), random_image(24, 2));
        let fast = ssim(&a, &b, 1.0).unwrap();
        assert!((fast - ssim_direct(&a, &b, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Image::zeros(GridSpec::new(16).unwrap());
        let b = Image::zeros(GridSpec::new(32).unwrap());
        assert!(image_metrics(&a, &b, 1.0).is_err());
        assert!(image_metrics(&a, &a, 0.0).is_err());
    }

    #[test]
    fn small_grids_use_a_smaller_window() {
        let (a, b) = (random_image(8, 3), random_image(8, 4));
        let v = ssim(&a, &b, 1.0).unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]
        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (random_image(16, s1), random_image(16, s2 + 1000));
            let ab = ssim(&a, &b, 1.0).unwrap();
            let ba = ssim(&b, &a, 1.0).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let m = image_metrics(&a, &b, 1.0).unwrap();
            prop_assert!(m.mse >= 0.0 && m.is_consistent(1.0));
        }
    }

    #[test]
    fn deformation_rmse_cases() {
        let g = GridSpec::new(16).unwrap();
        let mask = Array2::from_elem(g.shape(), true);
        let u = DeformationSequence::new(vec![
            DeformationField::identity(g),
            synth_rigid(0.1, (0.5, 0.0), g),
            synth_rigid(-0.05, (0.0, 0.3), g),
        ])
        .unwrap();
        assert_eq!(deformation_rmse(&u, &u, &mask).unwrap(), 0.0);
        let shifted = DeformationSequence::new(
            u.fields()
                .iter()
                .enumerate()
                .map(|(i, f)| if i == 0 { f.clone() } else { DeformationField::new(f.px() + 1.0, f.py().clone()).unwrap() })
                .collect(),
        )
        .unwrap();
        assert!((deformation_rmse(&shifted, &u, &mask).unwrap() - 1.0).abs() < 1e-12);
        assert!(deformation_rmse(&u, &u, &Array2::from_elem(g.shape(), false)).is_err());
    }

    #[test]
    fn deformation_rmse_matches_direct_sum() {
        let g = GridSpec::new(16).unwrap();
        let mut rng = Rng::new(9);
        let mut random_seq = || {
            let mut fields = vec![DeformationField::identity(g)];
            for _ in 0..3 {
                let f = DeformationField::identity(g);
                let px = f.px().mapv(|v| v + rng.normal());
                let py = f.py().mapv(|v| v + rng.normal());
                fields.push(DeformationField::new(px, py).unwrap());
            }
            DeformationSequence::new(fields).unwrap()
        };
        let (a, b) = (random_seq(), random_seq());
        let mask = Array2::from_shape_fn(g.shape(), |(j, k)| (j * 3 + k) % 4 != 0);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 1..4 {
            for j in 0..16 {
                for k in 0..16 {
                    if mask[[j, k]] {
                        let (ax, ay) = a.get(i).target(j, k);
                        let (bx, by) = b.get(i).target(j, k);
                        sum += (ax - bx).powi(2) + (ay - by).powi(2);
                        count += 1;
                    }
                }
            }
        }
        let direct = (sum / count as f64).sqrt();
        assert!((deformation_rmse(&a, &b, &mask).unwrap() - direct).abs() <= 1e-12);
    }
}
