//! Isotropic TV denoising by the dual projection method.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::grid::Image;

/// Dual step size; convergence needs `τ <= 1/8`.
pub const TV_STEP: f64 = 0.125;

/// Forward differences with Neumann boundary.
fn gradient(u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (r, c) = u.dim();
    let mut gr = Array2::zeros((r, c));
    let mut gc = Array2::zeros((r, c));
    for j in 0..r {
        for k in 0..c {
            if j + 1 < r {
                gr[[j, k]] = u[[j + 1, k]] - u[[j, k]];
            }
            if k + 1 < c {
                gc[[j, k]] = u[[j, k + 1]] - u[[j, k]];
            }
        }
    }
    (gr, gc)
}

/// Negative adjoint of [`gradient`].
fn divergence(pr: &Array2<f64>, pc: &Array2<f64>) -> Array2<f64> {
    let (r, c) = pr.dim();
    Array2::from_shape_fn((r, c), |(j, k)| {
        let a = if j + 1 < r { pr[[j, k]] } else { 0.0 } - if j > 0 { pr[[j - 1, k]] } else { 0.0 };
        let b = if k + 1 < c { pc[[j, k]] } else { 0.0 } - if k > 0 { pc[[j, k - 1]] } else { 0.0 };
        a + b
    })
}

/// Isotropic total variation `Σ |∇u|`.
pub fn total_variation(u: &Array2<f64>) -> f64 {
    let (gr, gc) = gradient(u);
    Zip::from(&gr).and(&gc).fold(0.0, |acc, &a, &b| acc + a.hypot(b))
}

/// Approximate minimizer of `½‖u - s‖² + λ TV(u)`, clamped to `u >= 0`.
pub fn tv_denoise(s: &Image, lambda: f64, iters: usize) -> Result<Image> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("TV weight must be nonnegative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(s.clone());
    }
    let f = s.values();
    let shape = f.dim();
    let mut pr = Array2::<f64>::zeros(shape);
    let mut pc = Array2::<f64>::zeros(shape);
    for _ in 0..iters {
        let w = divergence(&pr, &pc) - &(f / lambda);
        let (gr, gc) = gradient(&w);
        Zip::from(&mut pr).and(&mut pc).and(&gr).and(&gc).for_each(|pr, pc, &a, &b| {
            let den = 1.0 + TV_STEP * a.hypot(b);
            *pr = (*pr + TV_STEP * a) / den;
            *pc = (*pc + TV_STEP * b) / den;
        });
    }
    let mut u = f - &(divergence(&pr, &pc) * lambda);
    // a truncated dual iteration can in principle leave the energy above that of the input
    let energy = |v: &Array2<f64>| 0.5 * (v - f).mapv(|d| d * d).sum() + lambda * total_variation(v);
    if energy(&u) > energy(f) {
        u = f.clone();
    }
    u.mapv_inplace(|v| v.max(0.0));
    Image::new(u)
}
