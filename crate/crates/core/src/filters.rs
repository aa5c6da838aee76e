//! Small separable filters and resampling helpers on square arrays.

use ndarray::Array2;

use crate::interp;

/// Mean over non-overlapping `f x f` blocks.
pub(crate) fn block_average(a: &Array2<f64>, f: usize) -> Array2<f64> {
    let n = a.nrows() / f;
    let scale = 1.0 / (f * f) as f64;
    Array2::from_shape_fn((n, n), |(j, k)| {
        let mut acc = 0.0;
        for dj in 0..f {
            for dk in 0..f {
                acc += a[[j * f + dj, k * f + dk]];
            }
        }
        acc * scale
    })
}

/// Normalized Gaussian taps truncated at `3σ`.
pub(crate) fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let mut w: Vec<f64> =
        (-(radius as i64)..=radius as i64).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable convolution with edge replication.
pub(crate) fn convolve_separable(a: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (r, c) = a.dim();
    let rad = (taps.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let rows = Array2::from_shape_fn((r, c), |(j, k)| {
        taps.iter().enumerate().map(|(t, w)| w * a[[j, clamp(k as i64 + t as i64 - rad, c)]]).sum::<f64>()
    });
    Array2::from_shape_fn((r, c), |(j, k)| {
        taps.iter().enumerate().map(|(t, w)| w * rows[[clamp(j as i64 + t as i64 - rad, r), k]]).sum::<f64>()
    })
}

pub(crate) fn gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return a.clone();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    convolve_separable(a, &gaussian_taps(sigma, radius))
}

/// Bilinear resampling of a cell-centered array to `m x m`, extrapolating
/// linearly beyond the outer sample centers.
pub(crate) fn resample(a: &Array2<f64>, m: usize) -> Array2<f64> {
    let n = a.nrows();
    if n == m {
        return a.clone();
    }
    let ratio = n as f64 / m as f64;
    Array2::from_shape_fn((m, m), |(j, k)| {
        let fj = (j as f64 + 0.5) * ratio - 0.5;
        let fk = (k as f64 + 0.5) * ratio - 0.5;
        interp::sample_extrapolated(a, fj, fk)
    })
}

/// Central differences `(d/drow, d/dcol)`, one-sided at the edges.
pub(crate) fn central_gradient(a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (r, c) = a.dim();
    let gr = Array2::from_shape_fn((r, c), |(j, k)| {
        let (lo, hi) = (j.saturating_sub(1), (j + 1).min(r - 1));
        (a[[hi, k]] - a[[lo, k]]) / (hi - lo) as f64
    });
    let gc = Array2::from_shape_fn((r, c), |(j, k)| {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(c - 1));
        (a[[j, hi]] - a[[j, lo]]) / (hi - lo) as f64
    });
    (gr, gc)
}
