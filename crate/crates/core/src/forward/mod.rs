//! The motion forward model `y_i^c = A_i F [S_c · U_i[s]]`, its adjoint, the
//! residuum and measurement noise.
//!
//! On the NUFFT path `A_i F` is replaced by `D_i^{1/2} F^NU_i`, so all data,
//! residuals and noise live in the density-weighted domain.

mod coils;

pub use coils::{synth_coils, CoilMaps, COIL_RING_RADIUS, COIL_WIDTH_RANGE};

use std::str::FromStr;

use ndarray::{Array2, Axis as NdAxis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::deform::{apply_adjoint, apply_array, DeformationField, DeformationSequence};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image};
use crate::rng::Rng;
use crate::sampling::{partition_excitations, pipe_dcf, CenteredDft, ExcitationMasks, NufftPlan, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorPath {
    /// Nearest-grid masks on the centered DFT.
    Dfft,
    /// Gridding NUFFT with density compensation.
    Nufft,
}

impl FromStr for OperatorPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfft" => Ok(Self::Dfft),
            "nufft" => Ok(Self::Nufft),
            other => Err(Error::InvalidArgument(format!("unknown operator path {other:?}"))),
        }
    }
}

impl std::fmt::Display for OperatorPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dfft => "dfft",
            Self::Nufft => "nufft",
        })
    }
}

/// Per-excitation `(coils, samples)` blocks of k-space values.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    blocks: Vec<Array2<Complex64>>,
    /// Relative noise level the data were generated with.
    pub noise_level: f64,
    /// Realized noise energy `‖n‖²` (0 for clean data).
    pub noise_power: f64,
}

impl KSpaceData {
    pub fn new(blocks: Vec<Array2<Complex64>>) -> Self {
        Self { blocks, noise_level: 0.0, noise_power: 0.0 }
    }

    pub fn blocks(&self) -> &[Array2<Complex64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Array2<Complex64> {
        &self.blocks[i]
    }

    pub fn n_exc(&self) -> usize {
        self.blocks.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.iter().map(|b| b.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum()
    }

    pub fn sample_count(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::new(self.blocks.iter().map(|b| Array2::zeros(b.dim())).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.blocks.len() != other.blocks.len()
            || self.blocks.iter().zip(&other.blocks).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::DimensionMismatch("k-space data shapes differ".into()));
        }
        Ok(Self::new(self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect()))
    }

    /// `Re ⟨self, other⟩`.
    pub fn real_dot(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u.re * v.re + u.im * v.im).sum::<f64>())
            .sum()
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.zip_mut_with(b, |u, v| *u += v * alpha);
        }
    }

    /// Stacked `[N_exc, coils, samples]` array; only valid when all blocks share a shape.
    pub fn to_array(&self) -> Result<ndarray::Array3<Complex64>> {
        let views: Vec<_> = self.blocks.iter().map(|b| b.view()).collect();
        ndarray::stack(NdAxis(0), &views)
            .map_err(|_| Error::DimensionMismatch("excitation blocks differ in size".into()))
    }

    pub fn from_array(a: &ndarray::Array3<Complex64>) -> Self {
        Self::new(a.axis_iter(NdAxis(0)).map(|b| b.to_owned()).collect())
    }

    /// Blocks concatenated along the sample axis into `[coils, Σ M_i]`.
    pub fn to_concatenated(&self) -> Result<Array2<Complex64>> {
        let views: Vec<_> = self.blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(NdAxis(1), &views)
            .map_err(|_| Error::DimensionMismatch("excitation blocks differ in coil count".into()))
    }

    /// Inverse of [`Self::to_concatenated`] for the given block lengths.
    pub fn from_concatenated(a: &Array2<Complex64>, lengths: &[usize]) -> Result<Self> {
        let total: usize = lengths.iter().sum();
        if total != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples stored, {} expected",
                a.ncols(),
                total
            )));
        }
        let mut start = 0;
        let blocks = lengths
            .iter()
            .map(|&m| {
                let b = a.slice(ndarray::s![.., start..start + m]).to_owned();
                start += m;
                b
            })
            .collect();
        Ok(Self::new(blocks))
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Dfft {
        dft: CenteredDft,
    },
    Nufft {
        plans: Vec<NufftPlan>,
        weights: Vec<Vec<f64>>,
        sqrt_w: Vec<Vec<f64>>,
    },
}

/// Everything needed to evaluate the forward model and compare it with data.
#[derive(Debug, Clone)]
pub struct MotionProblem {
    grid: GridSpec,
    trajectory: Trajectory,
    masks: ExcitationMasks,
    coils: CoilMaps,
    data: KSpaceData,
    sampler: Sampler,
    kappa: Vec<f64>,
}

/// Default number of Pipe iterations.
pub const DCF_ITERS: usize = 20;

impl MotionProblem {
    /// Problem with zero data; attach measurements with [`MotionProblem::with_data`].
    pub fn new(traj: Trajectory, n_exc: usize, coils: CoilMaps, path: OperatorPath) -> Result<Self> {
        let grid = traj.grid();
        if coils.grid() != grid {
            return Err(Error::DimensionMismatch("coil maps and trajectory grids differ".into()));
        }
        let masks = partition_excitations(&traj, n_exc)?;
        let n2 = (grid.n() * grid.n()) as f64;
        let (sampler, kappa) = match path {
            OperatorPath::Dfft => {
                let kappa = (0..n_exc).map(|i| masks.count(i) as f64 / n2).collect();
                (Sampler::Dfft { dft: CenteredDft::new(grid.n()) }, kappa)
            }
            OperatorPath::Nufft => {
                let mut plans = Vec::with_capacity(n_exc);
                let mut weights = Vec::with_capacity(n_exc);
                for i in 0..n_exc {
                    let pts = traj.samples_of(masks.spokes(i));
                    weights.push(pipe_dcf(&pts, grid, DCF_ITERS)?.weights);
                    plans.push(NufftPlan::new(grid, &pts)?);
                }
                Self::nufft_sampler(plans, weights, grid)
            }
        };
        let data = KSpaceData::new(
            (0..n_exc)
                .map(|i| {
                    let m = match &sampler {
                        Sampler::Dfft { .. } => masks.count(i),
                        Sampler::Nufft { plans, .. } => plans[i].len(),
                    };
                    Array2::zeros((coils.len(), m))
                })
                .collect(),
        );
        Ok(Self { grid, trajectory: traj, masks, coils, data, sampler, kappa })
    }

    fn nufft_sampler(plans: Vec<NufftPlan>, weights: Vec<Vec<f64>>, grid: GridSpec) -> (Sampler, Vec<f64>) {
        let n2 = (grid.n() * grid.n()) as f64;
        let kappa = weights.iter().map(|w| w.iter().sum::<f64>() / n2).collect();
        let sqrt_w = weights.iter().map(|w| w.iter().map(|v| v.sqrt()).collect()).collect();
        (Sampler::Nufft { plans, weights, sqrt_w }, kappa)
    }

    /// Replaces the measured data; shapes must match the sampling.
    pub fn with_data(mut self, data: KSpaceData) -> Result<Self> {
        if data.n_exc() != self.n_exc() || data.blocks.iter().zip(&self.data.blocks).any(|(a, b)| a.dim() != b.dim()) {
            return Err(Error::DimensionMismatch("data do not match the sampling pattern".into()));
        }
        self.data = data;
        Ok(self)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn masks(&self) -> &ExcitationMasks {
        &self.masks
    }

    pub fn coils(&self) -> &CoilMaps {
        &self.coils
    }

    pub fn data(&self) -> &KSpaceData {
        &self.data
    }

    pub fn n_exc(&self) -> usize {
        self.data.n_exc()
    }

    /// Samples per coil in each excitation block.
    pub fn block_lengths(&self) -> Vec<usize> {
        self.data.blocks().iter().map(|b| b.ncols()).collect()
    }

    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn path(&self) -> OperatorPath {
        match self.sampler {
            Sampler::Dfft { .. } => OperatorPath::Dfft,
            Sampler::Nufft { .. } => OperatorPath::Nufft,
        }
    }

    /// Diagonal value `κ_i` of the sampling normal operator of excitation `i`.
    pub fn kappa(&self, i: usize) -> f64 {
        self.kappa[i]
    }

    /// Density compensation weights of excitation `i` (NUFFT path only).
    pub fn dcf(&self, i: usize) -> Option<&[f64]> {
        match &self.sampler {
            Sampler::Dfft { .. } => None,
            Sampler::Nufft { weights, .. } => Some(&weights[i]),
        }
    }

    fn check_sequence(&self, u: &DeformationSequence) -> Result<()> {
        if u.len() != self.n_exc() || u.grid() != self.grid {
            return Err(Error::DimensionMismatch(format!(
                "sequence of {} fields on N={} for a problem with {} excitations on N={}",
                u.len(),
                u.grid().n(),
                self.n_exc(),
                self.grid.n()
            )));
        }
        Ok(())
    }

    fn check_image(&self, s: &Array2<f64>) -> Result<()> {
        self.grid.check_shape(s, "image")
    }

    /// Samples `A_i F` of one coil image.
    fn sample(&self, i: usize, img: &Array2<Complex64>) -> Vec<Complex64> {
        match &self.sampler {
            Sampler::Dfft { dft } => {
                let f = dft.forward(img);
                self.masks.points(i).iter().map(|&p| f[p]).collect()
            }
            Sampler::Nufft { plans, sqrt_w, .. } => {
                let mut y = plans[i].forward(img);
                for (v, w) in y.iter_mut().zip(&sqrt_w[i]) {
                    *v *= *w;
                }
                y
            }
        }
    }

    /// Adjoint of [`Self::sample`].
    fn unsample(&self, i: usize, y: ndarray::ArrayView1<Complex64>) -> Array2<Complex64> {
        match &self.sampler {
            Sampler::Dfft { dft } => {
                let mut f = Array2::zeros(self.grid.shape());
                for (&p, &v) in self.masks.points(i).iter().zip(y.iter()) {
                    f[p] = v;
                }
                dft.inverse(&f)
            }
            Sampler::Nufft { plans, sqrt_w, .. } => {
                let yw: Vec<Complex64> = y.iter().zip(&sqrt_w[i]).map(|(v, w)| v * *w).collect();
                plans[i].adjoint(&yw)
            }
        }
    }

    /// Forward model of excitation `i` for an already warped image.
    pub fn forward_warped(&self, i: usize, warped: &Array2<f64>) -> Array2<Complex64> {
        let coils: Vec<Vec<Complex64>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let img = ndarray::Zip::from(warped)
                    .and(self.coils.map(c))
                    .map_collect(|&v, &s| Complex64::new(v * s, 0.0));
                self.sample(i, &img)
            })
            .collect();
        let m = coils.first().map_or(0, |v| v.len());
        let mut out = Array2::zeros((self.n_coils(), m));
        for (c, v) in coils.into_iter().enumerate() {
            out.row_mut(c).assign(&ndarray::Array1::from(v));
        }
        out
    }

    /// `Re Σ_c conj(S_c) · F* A_i* r_c`: residual back-projected to the image
    /// domain of excitation `i`, before the adjoint warp.
    pub fn backproject(&self, i: usize, r: &Array2<Complex64>) -> Array2<f64> {
        let parts: Vec<Array2<f64>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let z = self.unsample(i, r.row(c));
                ndarray::Zip::from(&z).and(self.coils.map(c)).map_collect(|v, &s| v.re * s)
            })
            .collect();
        let mut acc = Array2::zeros(self.grid.shape());
        for p in parts {
            acc += &p;
        }
        acc
    }

    pub fn forward_excitation(&self, i: usize, u: &DeformationField, s: &Array2<f64>) -> Array2<Complex64> {
        self.forward_warped(i, &apply_array(u, s))
    }

    pub fn adjoint_excitation(&self, i: usize, u: &DeformationField, r: &Array2<Complex64>) -> Array2<f64> {
        apply_adjoint(u, &self.backproject(i, r))
    }

    /// `𝒜(U, s)`.
    pub fn forward(&self, u: &DeformationSequence, s: &Array2<f64>) -> Result<KSpaceData> {
        self.check_sequence(u)?;
        self.check_image(s)?;
        let blocks = (0..self.n_exc())
            .into_par_iter()
            .map(|i| self.forward_excitation(i, u.get(i), s))
            .collect();
        Ok(KSpaceData::new(blocks))
    }

    /// `𝒜(U, ·)*` with respect to the real inner product on images.
    pub fn adjoint(&self, y: &KSpaceData, u: &DeformationSequence) -> Result<Array2<f64>> {
        self.check_sequence(u)?;
        if y.n_exc() != self.n_exc() {
            return Err(Error::DimensionMismatch("data excitation count".into()));
        }
        let parts: Vec<Array2<f64>> = (0..self.n_exc())
            .into_par_iter()
            .map(|i| self.adjoint_excitation(i, u.get(i), y.block(i)))
            .collect();
        let mut acc = Array2::zeros(self.grid.shape());
        for p in parts {
            acc += &p;
        }
        Ok(acc)
    }

    /// `R = y - 𝒜(U, s)` and `J = ‖R‖²`.
    pub fn residuum(&self, u: &DeformationSequence, s: &Array2<f64>) -> Result<(KSpaceData, f64)> {
        let r = self.data.sub(&self.forward(u, s)?)?;
        let j = r.norm_sqr();
        if !j.is_finite() {
            return Err(Error::NonFinite("residual norm".into()));
        }
        Ok((r, j))
    }

    /// `J_i = ‖𝒜_i(U_i, s) - y_i‖²`.
    pub fn excitation_objective(&self, i: usize, u: &DeformationField, s: &Array2<f64>) -> f64 {
        let f = self.forward_excitation(i, u, s);
        (&f - self.data.block(i)).iter().map(|v| v.norm_sqr()).sum()
    }

    /// `𝒜*𝒜 s`.
    pub fn normal(&self, u: &DeformationSequence, s: &Array2<f64>) -> Result<Array2<f64>> {
        self.adjoint(&self.forward(u, s)?, u)
    }

    /// `𝒜* y`.
    pub fn adjoint_data(&self, u: &DeformationSequence) -> Result<Array2<f64>> {
        self.adjoint(&self.data, u)
    }

    /// Sub-problem holding only the listed excitations.
    pub fn select(&self, excitations: &[usize]) -> Result<Self> {
        if excitations.is_empty() || excitations.iter().any(|&i| i >= self.n_exc()) {
            return Err(Error::InvalidArgument(format!(
                "excitation selection {excitations:?} out of range 0..{}",
                self.n_exc()
            )));
        }
        let masks = self.masks.select(excitations);
        let sampler = match &self.sampler {
            Sampler::Dfft { dft } => Sampler::Dfft { dft: dft.clone() },
            Sampler::Nufft { plans, weights, sqrt_w } => Sampler::Nufft {
                plans: excitations.iter().map(|&i| plans[i].clone()).collect(),
                weights: excitations.iter().map(|&i| weights[i].clone()).collect(),
                sqrt_w: excitations.iter().map(|&i| sqrt_w[i].clone()).collect(),
            },
        };
        let mut data = KSpaceData::new(excitations.iter().map(|&i| self.data.block(i).clone()).collect());
        data.noise_level = self.data.noise_level;
        Ok(Self {
            grid: self.grid,
            trajectory: self.trajectory.clone(),
            masks,
            coils: self.coils.clone(),
            data,
            sampler,
            kappa: excitations.iter().map(|&i| self.kappa[i]).collect(),
        })
    }

    /// Same problem with the coils reordered (data rows permuted accordingly).
    pub fn permute_coils(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.n_coils()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("coil order must be a permutation".into()));
        }
        let mut out = self.clone();
        out.coils = self.coils.permuted(order);
        let mut data = KSpaceData::new(self.data.blocks.iter().map(|b| b.select(NdAxis(0), order)).collect());
        data.noise_level = self.data.noise_level;
        data.noise_power = self.data.noise_power;
        out.data = data;
        Ok(out)
    }

    /// Problem at resolution `N / 2^h` built from the central k-space block.
    /// Data are scaled by `2^-h` so image amplitudes are preserved; coil
    /// maps are block-averaged.
    pub fn crop(&self, h: u32) -> Result<Self> {
        if h == 0 {
            return Ok(self.clone());
        }
        let f = 1usize << h;
        let grid = self.grid.coarsen(f)?;
        let scale = 1.0 / f as f64;
        let coils = self.coils.downsample(f)?;
        let n2 = (grid.n() * grid.n()) as f64;
        let masks;
        let (sampler, kappa, blocks) = match &self.sampler {
            Sampler::Dfft { .. } => {
                masks = self.masks.cropped(grid)?;
                let off = (self.grid.n() - grid.n()) / 2;
                let blocks = (0..self.n_exc())
                    .map(|i| {
                        let keep: Vec<usize> = self
                            .masks
                            .points(i)
                            .iter()
                            .enumerate()
                            .filter(|(_, &(a, b))| a >= off && b >= off && a < off + grid.n() && b < off + grid.n())
                            .map(|(m, _)| m)
                            .collect();
                        self.data.block(i).select(NdAxis(1), &keep).mapv(|v| v * scale)
                    })
                    .collect::<Vec<_>>();
                let kappa = (0..self.n_exc()).map(|i| masks.count(i) as f64 / n2).collect();
                (Sampler::Dfft { dft: CenteredDft::new(grid.n()) }, kappa, blocks)
            }
            Sampler::Nufft { plans, weights, .. } => {
                masks = self.masks.cropped(grid)?;
                let limit = grid.half();
                let mut new_plans = Vec::with_capacity(plans.len());
                let mut new_weights = Vec::with_capacity(plans.len());
                let mut blocks = Vec::with_capacity(plans.len());
                for (i, plan) in plans.iter().enumerate() {
                    let keep: Vec<usize> = plan
                        .samples()
                        .iter()
                        .enumerate()
                        .filter(|(_, (kx, ky))| kx.hypot(*ky) <= limit)
                        .map(|(m, _)| m)
                        .collect();
                    let pts: Vec<(f64, f64)> = keep.iter().map(|&m| plan.samples()[m]).collect();
                    new_plans.push(NufftPlan::new(grid, &pts)?);
                    new_weights.push(keep.iter().map(|&m| weights[i][m]).collect());
                    blocks.push(self.data.block(i).select(NdAxis(1), &keep).mapv(|v| v * scale));
                }
                let (sampler, kappa) = Self::nufft_sampler(new_plans, new_weights, grid);
                (sampler, kappa, blocks)
            }
        };
        let mut data = KSpaceData::new(blocks);
        data.noise_level = self.data.noise_level;
        data.noise_power = self.data.noise_power * scale * scale;
        Ok(Self { grid, trajectory: self.trajectory.clone(), masks, coils, data, sampler, kappa })
    }
}

/// `𝒜(U, s)`.
pub fn forward(u: &DeformationSequence, s: &Image, problem: &MotionProblem) -> Result<KSpaceData> {
    problem.forward(u, s.values())
}

/// `𝒜(U, ·)* y`.
pub fn adjoint(y: &KSpaceData, u: &DeformationSequence, problem: &MotionProblem) -> Result<Array2<f64>> {
    problem.adjoint(y, u)
}

/// `(y - 𝒜(U, s), ‖y - 𝒜(U, s)‖²)`.
pub fn residuum(u: &DeformationSequence, s: &Image, problem: &MotionProblem) -> Result<(KSpaceData, f64)> {
    problem.residuum(u, s.values())
}

/// Adds complex Gaussian noise of per-component standard deviation
/// `level · RMS(|y|) / √2` and records the realized noise energy.
pub fn add_noise(y: &KSpaceData, level: f64, rng: &mut Rng) -> Result<KSpaceData> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {level}")));
    }
    let mut out = y.clone();
    out.noise_level = level;
    if level == 0.0 {
        return Ok(out);
    }
    let count = y.sample_count().max(1) as f64;
    let rms = (y.norm_sqr() / count).sqrt();
    let sd = level * rms / std::f64::consts::SQRT_2;
    let mut power = 0.0;
    for b in out.blocks.iter_mut() {
        for v in b.iter_mut() {
            let n = Complex64::new(sd * rng.normal(), sd * rng.normal());
            power += n.norm_sqr();
            *v += n;
        }
    }
    out.noise_power = y.noise_power + power;
    Ok(out)
}

#[cfg(test)]
mod tests;
