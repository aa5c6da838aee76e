//! Synthetic receive-coil sensitivities.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::filters::block_average;
use crate::grid::GridSpec;
use crate::rng::Rng;

/// Real sensitivity maps `S_c(r) = exp(-|r - r_c|² / d_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    grid: GridSpec,
    maps: Vec<Array2<f64>>,
    centers: Vec<(f64, f64)>,
    widths: Vec<f64>,
}

/// Radius of the ring carrying the coil centers, as a fraction of N.
pub const COIL_RING_RADIUS: f64 = 0.45;
/// Range of `d_c` as multiples of `(N/2)²`.
pub const COIL_WIDTH_RANGE: (f64, f64) = (0.5, 1.5);

fn gaussian_map(grid: GridSpec, center: (f64, f64), width: f64) -> Array2<f64> {
    Array2::from_shape_fn(grid.shape(), |(j, k)| {
        let (x, y) = grid.coord(j, k);
        (-((x - center.0).powi(2) + (y - center.1).powi(2)) / width).exp()
    })
}

/// Coils on a ring around the field of view with random phase offset,
/// angular jitter and widths.
pub fn synth_coils(n_coils: usize, grid: GridSpec, rng: &mut Rng) -> Result<CoilMaps> {
    if n_coils == 0 {
        return Err(Error::InvalidArgument("n_coils must be positive".into()));
    }
    let radius = COIL_RING_RADIUS * grid.n() as f64;
    let base = grid.half().powi(2);
    let phase0 = rng.uniform(0.0, 2.0 * PI);
    let jitter = PI / (4.0 * n_coils as f64);
    let mut centers = Vec::with_capacity(n_coils);
    let mut widths = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let phi = phase0 + 2.0 * PI * c as f64 / n_coils as f64 + rng.uniform(-jitter, jitter);
        centers.push((radius * phi.cos(), radius * phi.sin()));
        widths.push(base * rng.uniform(COIL_WIDTH_RANGE.0, COIL_WIDTH_RANGE.1));
    }
    let maps = centers.iter().zip(&widths).map(|(&ctr, &w)| gaussian_map(grid, ctr, w)).collect();
    Ok(CoilMaps { grid, maps, centers, widths })
}

impl CoilMaps {
    /// Single coil of unit sensitivity (the `d_c -> ∞` limit).
    pub fn uniform(grid: GridSpec) -> Self {
        Self {
            grid,
            maps: vec![Array2::ones(grid.shape())],
            centers: vec![(0.0, 0.0)],
            widths: vec![f64::INFINITY],
        }
    }

    pub fn from_maps(maps: Vec<Array2<f64>>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::InvalidArgument("no coil maps".into()))?;
        let grid = GridSpec::new(first.nrows())?;
        for m in &maps {
            grid.check_shape(m, "coil map")?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("coil map".into()));
            }
        }
        let n = maps.len();
        Ok(Self { grid, maps, centers: vec![(f64::NAN, f64::NAN); n], widths: vec![f64::NAN; n] })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn map(&self, c: usize) -> &Array2<f64> {
        &self.maps[c]
    }

    pub fn maps(&self) -> &[Array2<f64>] {
        &self.maps
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// `Σ_c |S_c|²`.
    pub fn sum_of_squares(&self) -> Array2<f64> {
        self.maps.iter().fold(Array2::zeros(self.grid.shape()), |acc, m| acc + &m.mapv(|v| v * v))
    }

    /// Maps averaged over `f x f` blocks.
    pub fn downsample(&self, f: usize) -> Result<Self> {
        let grid = self.grid.coarsen(f)?;
        let maps = self.maps.iter().map(|m| block_average(m, f)).collect();
        Ok(Self { grid, maps, centers: self.centers.clone(), widths: self.widths.clone() })
    }

    /// Maps in a different coil order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            grid: self.grid,
            maps: order.iter().map(|&c| self.maps[c].clone()).collect(),
            centers: order.iter().map(|&c| self.centers[c]).collect(),
            widths: order.iter().map(|&c| self.widths[c]).collect(),
        }
    }
}
