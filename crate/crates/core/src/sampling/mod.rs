//! Radial k-space trajectories, acquisition ordering, per-excitation
//! partitioning and the two sampling operators (nearest-grid DFT masks and
//! Kaiser-Bessel gridding NUFFT).
//!
//! k-space coordinates are in cycles per field of view, so the Nyquist disc
//! has radius `N/2` and grid frequencies are integers.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub mod fft;
mod nufft;

pub use fft::{CenteredDft, Fft2};
pub use nufft::{kaiser_bessel_beta, pipe_dcf, DcfWeights, NufftPlan, KB_OVERSAMPLING, KB_WIDTH};

/// Radial spokes through the k-space origin with an acquisition order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: GridSpec,
    n_readout: usize,
    angles: Vec<f64>,
    order: Vec<usize>,
}

/// Evenly spaced radial trajectory acquired in van der Corput order.
pub fn radial_trajectory(n_spokes: usize, n_readout: usize, grid: GridSpec) -> Result<Trajectory> {
    if n_spokes == 0 {
        return Err(Error::InvalidArgument("n_spokes must be positive".into()));
    }
    if n_readout < 2 {
        return Err(Error::InvalidArgument("n_readout must be at least 2".into()));
    }
    let angles = (0..n_spokes).map(|j| j as f64 * PI / n_spokes as f64).collect();
    Ok(Trajectory { grid, n_readout, angles, order: van_der_corput_order(n_spokes) })
}

impl Trajectory {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn n_spokes(&self) -> usize {
        self.angles.len()
    }

    pub fn n_readout(&self) -> usize {
        self.n_readout
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Spoke index acquired at each step.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; self.n_spokes()];
        if order.len() != seen.len() || !order.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("acquisition order must be a permutation of the spokes".into()));
        }
        self.order = order;
        Ok(self)
    }

    /// Signed radii of the readout samples; radius 0 is always included.
    pub fn radii(&self) -> Vec<f64> {
        let step = self.grid.n() as f64 / self.n_readout as f64;
        (0..self.n_readout).map(|m| (m as f64 - (self.n_readout / 2) as f64) * step).collect()
    }

    /// `(kx, ky)` samples of one spoke.
    pub fn spoke_samples(&self, spoke: usize) -> Vec<(f64, f64)> {
        let (s, c) = self.angles[spoke].sin_cos();
        self.radii().into_iter().map(|r| (r * c, r * s)).collect()
    }

    /// Concatenated samples of the given spokes.
    pub fn samples_of(&self, spokes: &[usize]) -> Vec<(f64, f64)> {
        spokes.iter().flat_map(|&s| self.spoke_samples(s)).collect()
    }

    /// All samples, in acquisition order.
    pub fn samples(&self) -> Vec<(f64, f64)> {
        self.samples_of(&self.order)
    }

    /// `[N_spokes, N_readout, 2]` sample coordinates by spoke index.
    pub fn to_array(&self) -> ndarray::Array3<f64> {
        let mut a = ndarray::Array3::zeros((self.n_spokes(), self.n_readout, 2));
        for s in 0..self.n_spokes() {
            for (m, (kx, ky)) in self.spoke_samples(s).into_iter().enumerate() {
                a[[s, m, 0]] = kx;
                a[[s, m, 1]] = ky;
            }
        }
        a
    }
}

/// Base-2 radical inverse of `n` with `bits` digits.
fn bit_reverse(n: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        n.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Acquisition order of spokes: bit reversal for powers of two, otherwise a
/// greedy choice of the midpoint of the largest remaining angular gap.
pub fn van_der_corput_order(n_spokes: usize) -> Vec<usize> {
    if n_spokes.is_power_of_two() {
        let bits = n_spokes.trailing_zeros();
        return (0..n_spokes).map(|i| bit_reverse(i, bits)).collect();
    }
    let mut order = vec![0];
    let mut taken = vec![false; n_spokes];
    taken[0] = true;
    while order.len() < n_spokes {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        let (mut best_start, mut best_gap) = (0, 0);
        for (i, &s) in sorted.iter().enumerate() {
            let next = if i + 1 < sorted.len() { sorted[i + 1] } else { sorted[0] + n_spokes };
            if next - s > best_gap {
                best_gap = next - s;
                best_start = s;
            }
        }
        let pick = (best_start + best_gap / 2) % n_spokes;
        taken[pick] = true;
        order.push(pick);
    }
    order
}

/// Centered grid index `(row, col)` of the nearest grid frequency, rounding
/// half away from zero; `None` for frequencies outside the `N x N` grid.
pub fn nearest_grid_point(kx: f64, ky: f64, grid: GridSpec) -> Option<(usize, usize)> {
    let h = (grid.n() / 2) as i64;
    let (rx, ry) = (kx.round() as i64, ky.round() as i64);
    if rx < -h || rx >= h || ry < -h || ry >= h {
        return None;
    }
    Some(((ry + h) as usize, (rx + h) as usize))
}

/// Spokes and nearest-grid masks of each excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationMasks {
    grid: GridSpec,
    spokes: Vec<Vec<usize>>,
    points: Vec<Vec<(usize, usize)>>,
}

impl ExcitationMasks {
    pub fn n_exc(&self) -> usize {
        self.spokes.len()
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn spokes(&self, i: usize) -> &[usize] {
        &self.spokes[i]
    }

    /// Sampled grid points of excitation `i`, row-major sorted and unique.
    pub fn points(&self, i: usize) -> &[(usize, usize)] {
        &self.points[i]
    }

    /// `M_i`.
    pub fn count(&self, i: usize) -> usize {
        self.points[i].len()
    }

    pub fn mask(&self, i: usize) -> Array2<bool> {
        let mut m = Array2::from_elem(self.grid.shape(), false);
        for &p in &self.points[i] {
            m[p] = true;
        }
        m
    }

    /// Masks restricted to the central `n x n` block of k-space.
    pub fn cropped(&self, grid: GridSpec) -> Result<Self> {
        let (n0, n) = (self.grid.n(), grid.n());
        if n > n0 {
            return Err(Error::DimensionMismatch(format!("cannot crop {n0} to {n}")));
        }
        let off = (n0 - n) / 2;
        let points = self
            .points
            .iter()
            .map(|pts| {
                pts.iter()
                    .filter(|&&(a, b)| a >= off && b >= off && a < off + n && b < off + n)
                    .map(|&(a, b)| (a - off, b - off))
                    .collect()
            })
            .collect();
        Ok(Self { grid, spokes: self.spokes.clone(), points })
    }

    /// Masks of the listed excitations only, in the given order.
    pub fn select(&self, excitations: &[usize]) -> Self {
        Self {
            grid: self.grid,
            spokes: excitations.iter().map(|&i| self.spokes[i].clone()).collect(),
            points: excitations.iter().map(|&i| self.points[i].clone()).collect(),
        }
    }

    /// Builds masks from explicit point lists, deduplicated and sorted.
    pub fn from_points(grid: GridSpec, points: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if points.iter().flatten().any(|&(a, b)| a >= grid.n() || b >= grid.n()) {
            return Err(Error::DimensionMismatch("mask point outside the grid".into()));
        }
        let spokes = vec![Vec::new(); points.len()];
        let points = points
            .into_iter()
            .map(|mut p| {
                p.sort_unstable();
                p.dedup();
                p
            })
            .collect();
        Ok(Self { grid, spokes, points })
    }
}

/// Splits the acquisition order into `n_exc` contiguous blocks and builds
/// each block's nearest-grid mask.
pub fn partition_excitations(traj: &Trajectory, n_exc: usize) -> Result<ExcitationMasks> {
    let n_spokes = traj.n_spokes();
    if n_exc == 0 || !n_spokes.is_multiple_of(n_exc) {
        return Err(Error::InvalidArgument(format!("{n_spokes} spokes cannot be split into {n_exc} excitations")));
    }
    let per = n_spokes / n_exc;
    let grid = traj.grid();
    let spokes: Vec<Vec<usize>> = traj.order().chunks(per).map(|c| c.to_vec()).collect();
    let points = spokes
        .iter()
        .map(|block| {
            let mut pts: Vec<(usize, usize)> = traj
                .samples_of(block)
                .into_iter()
                .filter_map(|(kx, ky)| nearest_grid_point(kx, ky, grid))
                .collect();
            pts.sort_unstable();
            pts.dedup();
            pts
        })
        .collect();
    Ok(ExcitationMasks { grid, spokes, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn two_spokes_are_orthogonal() {
        let t = radial_trajectory(2, 16, grid(16)).unwrap();
        assert_eq!(t.angles(), &[0.0, PI / 2.0]);
    }

    #[test]
    fn paper_spacing() {
        let t = radial_trajectory(192, 192, grid(192)).unwrap();
        assert!((t.angles()[1] - PI / 192.0).abs() < 1e-15);
    }

    #[test]
    fn every_spoke_samples_the_origin() {
        let t = radial_trajectory(7, 33, grid(32)).unwrap();
        for s in 0..7 {
            let nearest = t.spoke_samples(s).into_iter().map(|(x, y)| x.hypot(y)).fold(f64::INFINITY, f64::min);
            assert_eq!(nearest, 0.0);
        }
        let t = radial_trajectory(5, 64, grid(64)).unwrap();
        assert!(t.samples().iter().all(|(x, y)| x.hypot(*y) <= 32.0 + 1e-12));
    }

    #[test]
    fn vdc_eight_is_bit_reversal() {
        assert_eq!(van_der_corput_order(8), vec![0, 4, 2, 6, 1, 5, 3, 7]);
        assert_eq!(van_der_corput_order(1), vec![0]);
    }

    #[test]
    fn vdc_is_permutation() {
        for n in [3, 5, 6, 12, 96, 101, 192] {
            let mut o = van_der_corput_order(n);
            assert_eq!(o[0], 0);
            o.sort_unstable();
            assert_eq!(o, (0..n).collect::<Vec<_>>());
        }
    }

    fn gap_ratio(prefix: &[usize], n: usize) -> f64 {
        let mut s = prefix.to_vec();
        s.sort_unstable();
        let gaps: Vec<usize> = (0..s.len()).map(|i| if i + 1 < s.len() { s[i + 1] - s[i] } else { s[0] + n - s[i] }).collect();
        *gaps.iter().max().unwrap() as f64 / *gaps.iter().min().unwrap() as f64
    }

    #[test]
    fn vdc_power_of_two_prefixes_are_uniform() {
        let o = van_der_corput_order(16);
        for m in 0..=4 {
            assert!(gap_ratio(&o[..1 << m], 16) <= 2.0);
        }
    }

    #[test]
    fn vdc_greedy_prefixes_are_uniform() {
        let o = van_der_corput_order(96);
        for len in [2, 4, 8, 16, 32] {
            assert!(gap_ratio(&o[..len], 96) <= 2.0, "prefix {len}");
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let g = grid(8);
        assert_eq!(nearest_grid_point(0.5, -0.5, g), Some((3, 5)));
        assert_eq!(nearest_grid_point(-4.0, 0.0, g), Some((4, 0)));
        assert_eq!(nearest_grid_point(3.5, 0.0, g), None);
    }

    #[test]
    fn paper_partition() {
        let t = radial_trajectory(192, 192, grid(192)).unwrap();
        let m = partition_excitations(&t, 16).unwrap();
        assert_eq!(m.n_exc(), 16);
        assert!((0..16).all(|i| m.spokes(i).len() == 12));
        assert!(partition_excitations(&t, 7).is_err());
    }

    #[test]
    fn union_of_masks_is_full_mask() {
        let g = grid(32);
        let t = radial_trajectory(24, 32, g).unwrap();
        let full = partition_excitations(&t, 1).unwrap().mask(0);
        let parts = partition_excitations(&t, 6).unwrap();
        let mut union = Array2::from_elem(g.shape(), false);
        for i in 0..6 {
            union.zip_mut_with(&parts.mask(i), |u, &m| *u |= m);
        }
        assert_eq!(union, full);
    }

    #[test]
    fn disjoint_spokes_without_shared_points_give_disjoint_masks() {
        let g = grid(16);
        let t = radial_trajectory(4, 16, g).unwrap();
        let m = partition_excitations(&t, 4).unwrap();
        let sets: Vec<std::collections::BTreeSet<_>> =
            (0..4).map(|i| m.points(i).iter().copied().collect()).collect();
        for a in 0..4 {
            for b in a + 1..4 {
                let shared: Vec<_> = sets[a].intersection(&sets[b]).collect();
                // spokes only meet at the origin; remove it and the sets are disjoint
                assert!(shared.iter().all(|&&p| p == (8, 8)));
                let mut ea = sets[a].clone();
                let mut eb = sets[b].clone();
                ea.remove(&(8, 8));
                eb.remove(&(8, 8));
                assert!(ea.is_disjoint(&eb));
            }
        }
    }

    #[test]
    fn crop_keeps_central_points() {
        let g = grid(16);
        let m = ExcitationMasks::from_points(g, vec![vec![(8, 8), (0, 0), (5, 11), (8, 8)]]).unwrap();
        assert_eq!(m.count(0), 3);
        let c = m.cropped(grid(8)).unwrap();
        assert_eq!(c.points(0), &[(1, 7), (4, 4)]);
    }
}
