//! Two-dimensional FFTs and the centered orthonormal DFT.
//!
//! The centered DFT places the spatial origin at the physical center of the
//! grid (between pixels) and the k-space origin at index `N/2`:
//!
//! `F[ky + N/2, kx + N/2] = 1/N · Σ_{j,k} s[j,k] · exp(-2πi (kx·x_k + ky·y_j)/N)`
//!
//! with half-integer pixel coordinates `x_k = k + 1/2 - N/2`. Cropping the
//! central block of `F` therefore corresponds to the same physical object at a
//! coarser resolution.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized square 2D FFT in natural (uncentered) order.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn run(&self, a: &mut Array2<Complex64>, plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(a.dim(), (self.n, self.n), "FFT size mismatch");
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        {
            let data = a.as_slice_mut().expect("standard layout");
            plan.process_with_scratch(data, &mut scratch);
        }
        let mut t = a.t().as_standard_layout().into_owned();
        plan.process_with_scratch(t.as_slice_mut().expect("standard layout"), &mut scratch);
        a.assign(&t.t());
    }

    /// `X[p,q] = Σ a[j,k] exp(-2πi (pj + qk)/n)`, in place.
    pub fn forward(&self, a: &mut Array2<Complex64>) {
        self.run(a, &self.fwd);
    }

    /// `a[j,k] = Σ X[p,q] exp(+2πi (pj + qk)/n)`, in place (no 1/n² factor).
    pub fn inverse(&self, a: &mut Array2<Complex64>) {
        self.run(a, &self.inv);
    }
}

/// Centered orthonormal DFT on an `N x N` grid, see the module docs.
#[derive(Debug, Clone)]
pub struct CenteredDft {
    fft: Fft2,
    /// per-axis factor `(-1)^k exp(-πik/N) / sqrt(N)` indexed by centered position
    phase: Vec<Complex64>,
}

impl CenteredDft {
    pub fn new(n: usize) -> Self {
        let scale = 1.0 / (n as f64).sqrt();
        let phase = (0..n)
            .map(|a| {
                let k = a as i64 - (n / 2) as i64;
                let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                Complex64::from_polar(sign * scale, -PI * k as f64 / n as f64)
            })
            .collect();
        Self { fft: Fft2::new(n), phase }
    }

    pub fn n(&self) -> usize {
        self.fft.n()
    }

    /// Natural FFT index of centered position `a`.
    #[inline]
    fn natural(&self, a: usize) -> usize {
        let n = self.n();
        (a + n / 2) % n
    }

    pub fn forward(&self, s: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.n();
        let mut x = s.clone();
        self.fft.forward(&mut x);
        Array2::from_shape_fn((n, n), |(a, b)| x[[self.natural(a), self.natural(b)]] * self.phase[a] * self.phase[b])
    }

    pub fn forward_real(&self, s: &Array2<f64>) -> Array2<Complex64> {
        self.forward(&s.mapv(|v| Complex64::new(v, 0.0)))
    }

    /// Inverse, equal to the adjoint.
    pub fn inverse(&self, f: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.n();
        let mut x = Array2::zeros((n, n));
        for a in 0..n {
            for b in 0..n {
                x[[self.natural(a), self.natural(b)]] = f[[a, b]] * (self.phase[a] * self.phase[b]).conj();
            }
        }
        self.fft.inverse(&mut x);
        x
    }

    /// Real part of the inverse.
    pub fn inverse_real(&self, f: &Array2<Complex64>) -> Array2<f64> {
        let x = self.inverse(f);
        let mut out = Array2::zeros(x.dim());
        Zip::from(&mut out).and(&x).for_each(|o, v| *o = v.re);
        out
    }
}
