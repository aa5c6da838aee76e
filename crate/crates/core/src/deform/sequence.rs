//! Random smooth motion sequences for simulation.

use std::str::FromStr;

use super::ffd::{synth_ffd, FfdSpec, NodeMotion, SplineOrder, TrigTrajectory};
use super::{compose, constrain_convex, ConvexRegion, DeformationField, DeformationSequence};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionClass {
    Rigid,
    Affine,
    Ffd,
    /// Rigid outer motion composed with an FFD confined to a convex region.
    FfdConvex,
}

impl FromStr for MotionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(Self::Rigid),
            "affine" => Ok(Self::Affine),
            "ffd" => Ok(Self::Ffd),
            "ffd+convex" | "ffd_convex" => Ok(Self::FfdConvex),
            other => Err(Error::InvalidArgument(format!("unknown motion class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub class: MotionClass,
    /// Peak rotation in degrees.
    pub max_rotation_deg: f64,
    /// Peak shift per axis as a fraction of the grid size.
    pub max_shift_frac: f64,
    /// Peak entry of the affine matrix deviation from a rotation.
    pub max_shear: f64,
    /// Peak displacement of FFD control nodes, in pixels.
    pub ffd_amplitude: f64,
    /// FFD control nodes per side.
    pub ffd_nodes: usize,
    pub ffd_order: SplineOrder,
    /// Region of the confined FFD; defaults to a centered disk of radius 0.3 N.
    pub region: Option<ConvexRegion>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            class: MotionClass::Rigid,
            max_rotation_deg: 10.0,
            max_shift_frac: 0.03,
            max_shear: 0.03,
            ffd_amplitude: 2.0,
            ffd_nodes: 5,
            ffd_order: SplineOrder::Cubic,
            region: None,
        }
    }
}

impl SequenceConfig {
    pub fn rigid(max_rotation_deg: f64, max_shift_frac: f64) -> Self {
        Self { max_rotation_deg, max_shift_frac, ..Self::default() }
    }

    pub fn zero(class: MotionClass) -> Self {
        Self {
            class,
            max_rotation_deg: 0.0,
            max_shift_frac: 0.0,
            max_shear: 0.0,
            ffd_amplitude: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self, grid: GridSpec) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("motion bound {what} out of range")));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.max_rotation_deg) || self.max_rotation_deg > 180.0 {
            return bad("max_rotation_deg");
        }
        if !finite_nonneg(self.max_shift_frac) || self.max_shift_frac >= 0.5 {
            return bad("max_shift_frac");
        }
        if !finite_nonneg(self.max_shear) || self.max_shear >= 0.5 {
            return bad("max_shear");
        }
        if self.ffd_nodes < 3 {
            return Err(Error::InvalidArgument("FFD sequences need at least 3 nodes per side".into()));
        }
        let spacing = grid.n() as f64 / (self.ffd_nodes - 1) as f64;
        if !finite_nonneg(self.ffd_amplitude) || self.ffd_amplitude > spacing {
            return bad("ffd_amplitude");
        }
        Ok(())
    }
}

/// Trajectory with random low-frequency coefficients whose peak over the
/// excitation times is `bound` times a random factor in `[0.6, 1]`.
fn random_trajectory(rng: &mut Rng, n_exc: usize, bound: f64) -> TrigTrajectory {
    let mut t = TrigTrajectory::default();
    for r in 0..3 {
        let decay = ((r + 1) * (r + 1)) as f64;
        t.sin[r] = rng.normal() / decay;
        t.cos[r] = rng.normal() / decay;
    }
    let target = bound * rng.uniform(0.6, 1.0);
    let times = (1..n_exc).map(|i| i as f64 / (n_exc - 1).max(1) as f64);
    let peak = times.map(|tau| t.eval(tau).abs()).fold(0.0, f64::max);
    if bound == 0.0 || peak == 0.0 {
        return TrigTrajectory::default();
    }
    t.scaled(target / peak)
}

struct RigidTrajectories {
    theta: TrigTrajectory,
    tx: TrigTrajectory,
    ty: TrigTrajectory,
}

impl RigidTrajectories {
    fn draw(cfg: &SequenceConfig, grid: GridSpec, n_exc: usize, rng: &mut Rng) -> Self {
        let shift = cfg.max_shift_frac * grid.n() as f64;
        Self {
            theta: random_trajectory(rng, n_exc, cfg.max_rotation_deg.to_radians()),
            tx: random_trajectory(rng, n_exc, shift),
            ty: random_trajectory(rng, n_exc, shift),
        }
    }

    /// Pull-back matrix and offset at time `tau`, for `p = M (x - t)`.
    fn at(&self, tau: f64) -> ([[f64; 2]; 2], (f64, f64)) {
        let (s, c) = self.theta.eval(tau).sin_cos();
        ([[c, s], [-s, c]], (self.tx.eval(tau), self.ty.eval(tau)))
    }
}

fn from_matrix(grid: GridSpec, m: [[f64; 2]; 2], t: (f64, f64)) -> DeformationField {
    DeformationField::from_fn(grid, |x, y| {
        let (dx, dy) = (x - t.0, y - t.1);
        (m[0][0] * dx + m[0][1] * dy, m[1][0] * dx + m[1][1] * dy)
    })
}

fn random_ffd(cfg: &SequenceConfig, n_exc: usize, rng: &mut Rng) -> FfdSpec {
    let m = cfg.ffd_nodes;
    let mut spec = FfdSpec::uniform(m, cfg.ffd_order, NodeMotion::default());
    for l in 1..m - 1 {
        for c in 1..m - 1 {
            let node = &mut spec.nodes[l * m + c];
            // per-axis peak, so the displacement norm stays within the bound
            let bound = cfg.ffd_amplitude / std::f64::consts::SQRT_2;
            node.shift = [random_trajectory(rng, n_exc, bound), random_trajectory(rng, n_exc, bound)];
        }
    }
    spec
}

/// Seeded smooth motion sequence; field 0 is the identity.
pub fn synth_sequence(
    cfg: &SequenceConfig,
    grid: GridSpec,
    n_exc: usize,
    rng: &mut Rng,
) -> Result<DeformationSequence> {
    if n_exc == 0 {
        return Err(Error::InvalidArgument("n_exc must be positive".into()));
    }
    cfg.validate(grid)?;
    let tau = |i: usize| if n_exc > 1 { i as f64 / (n_exc - 1) as f64 } else { 0.0 };
    let mut fields = vec![DeformationField::identity(grid)];
    match cfg.class {
        MotionClass::Rigid => {
            let rt = RigidTrajectories::draw(cfg, grid, n_exc, rng);
            for i in 1..n_exc {
                let (m, t) = rt.at(tau(i));
                fields.push(from_matrix(grid, m, t));
            }
        }
        MotionClass::Affine => {
            let rt = RigidTrajectories::draw(cfg, grid, n_exc, rng);
            let shear: Vec<TrigTrajectory> = (0..4).map(|_| random_trajectory(rng, n_exc, cfg.max_shear)).collect();
            for i in 1..n_exc {
                let (r, t) = rt.at(tau(i));
                let g: Vec<f64> = shear.iter().map(|s| s.eval(tau(i))).collect();
                let a = [[1.0 + g[0], g[1]], [g[2], 1.0 + g[3]]];
                let m = [
                    [a[0][0] * r[0][0] + a[0][1] * r[1][0], a[0][0] * r[0][1] + a[0][1] * r[1][1]],
                    [a[1][0] * r[0][0] + a[1][1] * r[1][0], a[1][0] * r[0][1] + a[1][1] * r[1][1]],
                ];
                fields.push(from_matrix(grid, m, t));
            }
        }
        MotionClass::Ffd => {
            let spec = random_ffd(cfg, n_exc, rng);
            for i in 1..n_exc {
                fields.push(synth_ffd(&spec, i, n_exc, grid)?);
            }
        }
        MotionClass::FfdConvex => {
            let rt = RigidTrajectories::draw(cfg, grid, n_exc, rng);
            let spec = random_ffd(cfg, n_exc, rng);
            let r = 0.3 * grid.n() as f64;
            let region = match cfg.region {
                Some(c) => c,
                None => ConvexRegion::ellipse((0.0, 0.0), r, r)?,
            };
            for i in 1..n_exc {
                let (m, t) = rt.at(tau(i));
                let outer = from_matrix(grid, m, t);
                let inner = constrain_convex(&synth_ffd(&spec, i, n_exc, grid)?, &region)?;
                fields.push(compose(&outer, &inner)?);
            }
        }
    }
    DeformationSequence::new(fields)
}

/// Adds a smooth random displacement to every field `i >= 1`, scaled so the
/// RMS displacement length over the masked pixels (all when `None`) and the
/// perturbed excitations equals `rms` pixels.
pub fn perturb_sequence(
    u: &DeformationSequence,
    rms: f64,
    mask: Option<&ndarray::Array2<bool>>,
    rng: &mut Rng,
) -> Result<DeformationSequence> {
    if !(rms >= 0.0 && rms.is_finite()) {
        return Err(Error::InvalidArgument(format!("perturbation RMS must be nonnegative, got {rms}")));
    }
    let g = u.grid();
    if u.len() < 2 || rms == 0.0 {
        return Ok(u.clone());
    }
    let n = g.n() as f64;
    let mut perturbations = Vec::with_capacity(u.len() - 1);
    for _ in 1..u.len() {
        // a handful of plane waves with wavelengths of at least half the field of view
        let modes: Vec<[f64; 6]> = (0..6)
            .map(|_| {
                let (fx, fy) = (rng.uniform(-2.0, 2.0) / n, rng.uniform(-2.0, 2.0) / n);
                [fx, fy, rng.uniform(0.0, std::f64::consts::TAU), rng.normal(), rng.normal(), 0.0]
            })
            .collect();
        let field = |x: f64, y: f64| {
            modes.iter().fold((0.0, 0.0), |acc, m| {
                let c = (std::f64::consts::TAU * (m[0] * x + m[1] * y) + m[2]).cos();
                (acc.0 + m[3] * c, acc.1 + m[4] * c)
            })
        };
        let dx = ndarray::Array2::from_shape_fn(g.shape(), |(j, k)| {
            let (x, y) = g.coord(j, k);
            field(x, y).0
        });
        let dy = ndarray::Array2::from_shape_fn(g.shape(), |(j, k)| {
            let (x, y) = g.coord(j, k);
            field(x, y).1
        });
        perturbations.push((dx, dy));
    }
    let (mut energy, mut count) = (0.0, 0.0);
    for (dx, dy) in &perturbations {
        for ((p, &a), &b) in dx.indexed_iter().zip(dy.iter()) {
            if mask.is_none_or(|m| m[p]) {
                energy += a * a + b * b;
                count += 1.0;
            }
        }
    }
    if count == 0.0 || energy == 0.0 {
        return Err(Error::InvalidArgument("perturbation mask is empty".into()));
    }
    let scale = rms / (energy / count).sqrt();
    let mut out = u.clone();
    for (i, (dx, dy)) in perturbations.into_iter().enumerate() {
        let f = u.get(i + 1);
        let field = DeformationField::new(f.px() + &(dx * scale), f.py() + &(dy * scale))?;
        out.set(i + 1, field)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::fit_rigid;

    fn grid() -> GridSpec {
        GridSpec::new(32).unwrap()
    }

    const CLASSES: [MotionClass; 4] = [MotionClass::Rigid, MotionClass::Affine, MotionClass::Ffd, MotionClass::FfdConvex];

    #[test]
    fn zero_amplitude_gives_identity() {
        for class in CLASSES {
            let seq = synth_sequence(&SequenceConfig::zero(class), grid(), 6, &mut Rng::new(1)).unwrap();
            assert!(seq.fields().iter().all(|f| f.is_identity(1e-12)), "{class:?}");
        }
    }

    #[test]
    fn rigid_within_bounds() {
        let cfg = SequenceConfig::rigid(10.0, 0.03);
        for seed in 0..5 {
            let seq = synth_sequence(&cfg, grid(), 8, &mut Rng::new(seed)).unwrap();
            let mut peak = 0.0f64;
            for f in seq.fields() {
                let p = fit_rigid(f, None).unwrap();
                assert!(p.theta.to_degrees().abs() <= 10.0 + 1e-9);
                assert!(p.tx.abs() <= 0.03 * 32.0 + 1e-9 && p.ty.abs() <= 0.03 * 32.0 + 1e-9);
                peak = peak.max(p.theta.abs());
            }
            assert!(peak > 0.0);
        }
    }

    #[test]
    fn deterministic_and_pinned() {
        for class in CLASSES {
            let cfg = SequenceConfig { class, ..SequenceConfig::default() };
            let a = synth_sequence(&cfg, grid(), 5, &mut Rng::new(9)).unwrap();
            let b = synth_sequence(&cfg, grid(), 5, &mut Rng::new(9)).unwrap();
            assert_eq!(a, b);
            assert!(a.get(0).is_identity(0.0));
            assert!(!a.get(4).is_identity(1e-6), "{class:?}");
        }
    }

    #[test]
    fn perturbation_has_requested_rms() {
        let u = DeformationSequence::identity(grid(), 5);
        let p = perturb_sequence(&u, 2.0, None, &mut Rng::new(4)).unwrap();
        let mut e = 0.0;
        for f in &p.fields()[1..] {
            let (dx, dy) = f.displacement();
            e += (&dx * &dx + &dy * &dy).sum();
        }
        assert!(((e / (4.0 * 1024.0)).sqrt() - 2.0).abs() < 1e-12);
        assert!(p.get(0).is_identity(0.0));
    }

    #[test]
    fn bounds_exceeding_fov_rejected() {
        let mut cfg = SequenceConfig::rigid(5.0, 0.6);
        assert!(synth_sequence(&cfg, grid(), 4, &mut Rng::new(0)).is_err());
        cfg = SequenceConfig { class: MotionClass::Ffd, ffd_amplitude: 20.0, ..SequenceConfig::default() };
        assert!(synth_sequence(&cfg, grid(), 4, &mut Rng::new(0)).is_err());
    }
}
