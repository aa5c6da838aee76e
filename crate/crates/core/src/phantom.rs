//! Synthetic reference images.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    /// Five smooth-edged disks of distinct intensity placed from a seed.
    Disks { seed: u64 },
    Constant,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan" => Ok(PhantomKind::SheppLogan),
            "disks" => Ok(PhantomKind::Disks { seed: 0 }),
            "constant" => Ok(PhantomKind::Constant),
            other => Err(Error::UnknownPhantom(other.to_string())),
        }
    }
}

/// One ellipse of the Shepp-Logan family in normalized coordinates
/// (`[-1, 1]²`, y pointing up).
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// The ten ellipses of the modified (high-contrast) Shepp-Logan head phantom.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { intensity: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi_deg: 0.0 },
    Ellipse { intensity: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi_deg: 0.0 },
    Ellipse { intensity: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi_deg: -18.0 },
    Ellipse { intensity: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi_deg: 18.0 },
    Ellipse { intensity: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi_deg: 0.0 },
];

/// Normalized Shepp-Logan coordinates of a pixel coordinate; row 0 is the top.
pub fn normalized(grid: GridSpec, x: f64, y: f64) -> (f64, f64) {
    (x / grid.half(), -y / grid.half())
}

pub fn make_phantom(kind: PhantomKind, grid: GridSpec) -> Image {
    match kind {
        PhantomKind::Constant => Image::constant(grid, 1.0),
        PhantomKind::SheppLogan => Image::from_fn(grid, |x, y| {
            let (u, v) = normalized(grid, x, y);
            let sum: f64 = SHEPP_LOGAN.iter().filter(|e| e.contains(u, v)).map(|e| e.intensity).sum();
            // 1 - 0.8 - 0.2 rounds to a tiny negative number
            sum.max(0.0)
        }),
        PhantomKind::Disks { seed } => disks(grid, seed),
    }
}

#[derive(Debug, Clone, Copy)]
struct Disk {
    cx: f64,
    cy: f64,
    r: f64,
    intensity: f64,
}

/// Half width of the smooth disk edge, in pixels.
const EDGE_HALF_WIDTH: f64 = 1.5;

/// C-infinity step from 0 (t <= 0) to 1 (t >= 1).
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let g = |s: f64| (-1.0 / s).exp();
    g(t) / (g(t) + g(1.0 - t))
}

fn disks(grid: GridSpec, seed: u64) -> Image {
    let n = grid.n() as f64;
    let mut rng = Rng::new(seed).substream(crate::rng::stream::PHANTOM);
    let mut levels = [0.4, 0.55, 0.7, 0.85, 1.0];
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.below(i + 1));
    }
    let mut placed: Vec<Disk> = Vec::with_capacity(5);
    let mut attempts = 0usize;
    while placed.len() < 5 {
        attempts += 1;
        // shrink the admissible radii if the grid is crowded
        let shrink = if attempts > 2000 { 0.7 } else { 1.0 };
        let r = rng.uniform(0.08 * n, 0.14 * n) * shrink;
        let reach = 0.34 * n - r;
        let rho = reach * rng.uniform(0.0, 1.0).sqrt();
        let ang = rng.uniform(0.0, 2.0 * PI);
        let (cx, cy) = (rho * ang.cos(), rho * ang.sin());
        let gap = 2.0 * EDGE_HALF_WIDTH + 1.0;
        let free = placed.iter().all(|d| ((d.cx - cx).powi(2) + (d.cy - cy).powi(2)).sqrt() >= d.r + r + gap);
        if free || attempts > 10_000 {
            placed.push(Disk { cx, cy, r, intensity: levels[placed.len()] });
        }
    }
    Image::from_fn(grid, |x, y| {
        placed
            .iter()
            .map(|d| {
                let dist = ((x - d.cx).powi(2) + (y - d.cy).powi(2)).sqrt();
                let t = (d.r + EDGE_HALF_WIDTH - dist) / (2.0 * EDGE_HALF_WIDTH);
                d.intensity * smooth_step(t)
            })
            .sum()
    })
}
