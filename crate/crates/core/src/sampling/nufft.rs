//! Kaiser-Bessel gridding NUFFT and Pipe density compensation.
//!
//! The forward transform evaluates the centered orthonormal DFT of an image at
//! arbitrary k-space points inside the Nyquist disc:
//! `y(k) = 1/N · Σ_{j,k} s[j,k] exp(-2πi k·x_{j,k} / N)`.
//! It pre-divides by the kernel's Fourier transform, takes a 2x oversampled
//! FFT and interpolates with a separable Kaiser-Bessel kernel.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use super::fft::Fft2;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const KB_OVERSAMPLING: f64 = 2.0;
/// Kernel support in oversampled grid cells (4 original pixels).
pub const KB_WIDTH: usize = 8;

/// Shape parameter for a kernel of `width` oversampled cells at oversampling `alpha`.
pub fn kaiser_bessel_beta(width: f64, alpha: f64) -> f64 {
    PI * ((width / alpha).powi(2) * (alpha - 0.5).powi(2) - 0.8).sqrt()
}

/// Modified Bessel function of the first kind, order zero (power series;
/// accurate to rounding for the arguments used here).
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[derive(Debug, Clone, Copy)]
struct Kernel {
    width: f64,
    beta: f64,
    norm: f64,
}

impl Kernel {
    fn standard() -> Self {
        let width = KB_WIDTH as f64;
        let beta = kaiser_bessel_beta(width, KB_OVERSAMPLING);
        Self { width, beta, norm: bessel_i0(beta) }
    }

    /// Kernel value at offset `d` in oversampled cells.
    fn eval(&self, d: f64) -> f64 {
        let t = 2.0 * d / self.width;
        if t.abs() > 1.0 {
            return 0.0;
        }
        bessel_i0(self.beta * (1.0 - t * t).sqrt()) / self.norm
    }

    /// Continuous Fourier transform at normalized frequency `nu` (cycles per cell).
    fn transform(&self, nu: f64) -> f64 {
        let z2 = self.beta * self.beta - (PI * self.width * nu).powi(2);
        let v = if z2 > 0.0 {
            let z = z2.sqrt();
            z.sinh() / z
        } else {
            let z = (-z2).sqrt();
            if z == 0.0 {
                1.0
            } else {
                z.sin() / z
            }
        };
        self.width * v / self.norm
    }
}

/// Per-axis interpolation taps of one sample.
#[derive(Debug, Clone)]
struct Taps {
    /// natural (wrapped) oversampled indices
    idx: [usize; KB_WIDTH],
    /// kernel weight times the half-pixel phase of the tap frequency
    w: [Complex64; KB_WIDTH],
}

impl Taps {
    fn new(kernel: &Kernel, u: f64, g: usize, n: usize) -> Self {
        let first = u.floor() as i64 - (KB_WIDTH as i64 / 2 - 1);
        // pixel k sits at p = k of the padded grid, i.e. x = p + c
        let c = 0.5 - (n / 2) as f64;
        let mut idx = [0; KB_WIDTH];
        let mut w = [Complex64::new(0.0, 0.0); KB_WIDTH];
        for t in 0..KB_WIDTH {
            let q = first + t as i64;
            idx[t] = q.rem_euclid(g as i64) as usize;
            w[t] = Complex64::from_polar(kernel.eval(u - q as f64), -2.0 * PI * q as f64 * c / g as f64);
        }
        Self { idx, w }
    }
}

/// Precomputed NUFFT for a fixed sample set.
#[derive(Debug, Clone)]
pub struct NufftPlan {
    n: usize,
    g: usize,
    samples: Vec<(f64, f64)>,
    taps: Vec<(Taps, Taps)>,
    deapod: Vec<f64>,
    fft: Fft2,
}

impl NufftPlan {
    pub fn new(grid: GridSpec, samples: &[(f64, f64)]) -> Result<Self> {
        let n = grid.n();
        let g = (KB_OVERSAMPLING * n as f64) as usize;
        let limit = grid.half();
        for &(kx, ky) in samples {
            let r = kx.hypot(ky);
            if !r.is_finite() || r > limit * (1.0 + 1e-12) {
                return Err(Error::TrajectoryOutOfRange { radius: r, limit });
            }
        }
        let kernel = Kernel::standard();
        let to_cells = g as f64 / n as f64;
        let taps = samples
            .iter()
            .map(|&(kx, ky)| (Taps::new(&kernel, kx * to_cells, g, n), Taps::new(&kernel, ky * to_cells, g, n)))
            .collect();
        let deapod = (0..n).map(|k| kernel.transform((k as f64 + 0.5 - (n / 2) as f64) / g as f64)).collect();
        Ok(Self { n, g, samples: samples.to_vec(), taps, deapod, fft: Fft2::new(g) })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Image to samples.
    pub fn forward(&self, s: &Array2<Complex64>) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(s.dim(), (n, n), "image size mismatch");
        let mut buf = Array2::zeros((self.g, self.g));
        for j in 0..n {
            for k in 0..n {
                buf[[j, k]] = s[[j, k]] / (self.deapod[j] * self.deapod[k]);
            }
        }
        self.fft.forward(&mut buf);
        let scale = 1.0 / n as f64;
        self.taps
            .par_iter()
            .map(|(tx, ty)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..KB_WIDTH {
                    let row = buf.row(ty.idx[a]);
                    let mut inner = Complex64::new(0.0, 0.0);
                    for b in 0..KB_WIDTH {
                        inner += tx.w[b] * row[tx.idx[b]];
                    }
                    acc += ty.w[a] * inner;
                }
                acc * scale
            })
            .collect()
    }

    pub fn forward_real(&self, s: &Array2<f64>) -> Vec<Complex64> {
        self.forward(&s.mapv(|v| Complex64::new(v, 0.0)))
    }

    /// Samples to image; the exact adjoint of [`NufftPlan::forward`].
    pub fn adjoint(&self, y: &[Complex64]) -> Array2<Complex64> {
        assert_eq!(y.len(), self.taps.len(), "sample count mismatch");
        let n = self.n;
        let scale = 1.0 / n as f64;
        let mut buf = Array2::<Complex64>::zeros((self.g, self.g));
        for ((tx, ty), &v) in self.taps.iter().zip(y) {
            let v = v * scale;
            for a in 0..KB_WIDTH {
                let va = ty.w[a].conj() * v;
                let mut row = buf.row_mut(ty.idx[a]);
                for b in 0..KB_WIDTH {
                    row[tx.idx[b]] += tx.w[b].conj() * va;
                }
            }
        }
        self.fft.inverse(&mut buf);
        Array2::from_shape_fn((n, n), |(j, k)| buf[[j, k]] / (self.deapod[j] * self.deapod[k]))
    }
}

/// Nonnegative per-sample density compensation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DcfWeights {
    pub weights: Vec<f64>,
}

impl DcfWeights {
    pub fn uniform(len: usize) -> Self {
        Self { weights: vec![1.0; len] }
    }

    pub fn sqrt(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.sqrt()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Smallest admissible gridded density.
const DENSITY_EPS: f64 = 1e-12;

/// Pipe's fixed-point iteration `w <- w / (G Gᵀ w)` with the Kaiser-Bessel
/// gridding kernel on the 2x oversampled grid. The result is scaled so that
/// the weights of the samples within half a grid step of DC sum to one.
pub fn pipe_dcf(samples: &[(f64, f64)], grid: GridSpec, iters: usize) -> Result<DcfWeights> {
    if iters == 0 {
        return Err(Error::InvalidArgument("pipe_dcf needs at least one iteration".into()));
    }
    let n = grid.n();
    let limit = grid.half();
    if let Some(&(kx, ky)) = samples.iter().find(|(kx, ky)| kx.hypot(*ky) > limit * (1.0 + 1e-12)) {
        return Err(Error::TrajectoryOutOfRange { radius: kx.hypot(ky), limit });
    }
    let kernel = Kernel::standard();
    let to_cells = KB_OVERSAMPLING;
    // non-periodic oversampled grid covering the disc plus the kernel reach
    let reach = KB_WIDTH as i64;
    let off = (to_cells * n as f64 / 2.0) as i64 + reach;
    let size = (2 * off + 1) as usize;
    let taps: Vec<([usize; KB_WIDTH], [f64; KB_WIDTH], [usize; KB_WIDTH], [f64; KB_WIDTH])> = samples
        .iter()
        .map(|&(kx, ky)| {
            let axis = |u: f64| {
                let first = u.floor() as i64 - (KB_WIDTH as i64 / 2 - 1);
                let mut idx = [0; KB_WIDTH];
                let mut w = [0.0; KB_WIDTH];
                for t in 0..KB_WIDTH {
                    let q = first + t as i64;
                    idx[t] = (q + off) as usize;
                    w[t] = kernel.eval(u - q as f64);
                }
                (idx, w)
            };
            let (ix, wx) = axis(kx * to_cells);
            let (iy, wy) = axis(ky * to_cells);
            (ix, wx, iy, wy)
        })
        .collect();
    let mut w = vec![1.0; samples.len()];
    let mut buf = Array2::<f64>::zeros((size, size));
    for _ in 0..iters {
        buf.fill(0.0);
        for ((ix, wx, iy, wy), &v) in taps.iter().zip(&w) {
            for a in 0..KB_WIDTH {
                for b in 0..KB_WIDTH {
                    buf[[iy[a], ix[b]]] += wy[a] * wx[b] * v;
                }
            }
        }
        let density: Vec<f64> = taps
            .par_iter()
            .map(|(ix, wx, iy, wy)| {
                let mut acc = 0.0;
                for a in 0..KB_WIDTH {
                    for b in 0..KB_WIDTH {
                        acc += wy[a] * wx[b] * buf[[iy[a], ix[b]]];
                    }
                }
                acc
            })
            .collect();
        for (wi, d) in w.iter_mut().zip(&density) {
            if !(*d > DENSITY_EPS) {
                return Err(Error::DensityVanished(format!("gridded density {d:e}")));
            }
            *wi /= d;
        }
    }
    let dc: f64 = samples.iter().zip(&w).filter(|((kx, ky), _)| kx.hypot(*ky) <= 0.5).map(|(_, &v)| v).sum();
    if !(dc > 0.0) {
        return Err(Error::DensityVanished("no sample within half a grid step of DC".into()));
    }
    Ok(DcfWeights { weights: w.into_iter().map(|v| v / dc).collect() })
}
