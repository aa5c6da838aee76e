use super::*;
use crate::deform::{apply, synth_rigid, synth_sequence, SequenceConfig};
use crate::phantom::{make_phantom, PhantomKind};
use crate::sampling::radial_trajectory;
use std::f64::consts::PI;

fn setup(n: usize, spokes: usize, n_exc: usize, n_coils: usize, path: OperatorPath) -> (MotionProblem, DeformationSequence) {
    let g = GridSpec::new(n).unwrap();
    let traj = radial_trajectory(spokes, n, g).unwrap();
    let coils = synth_coils(n_coils, g, &mut Rng::new(3)).unwrap();
    let p = MotionProblem::new(traj, n_exc, coils, path).unwrap();
    let u = synth_sequence(&SequenceConfig::rigid(8.0, 0.04), g, n_exc, &mut Rng::new(5)).unwrap();
    (p, u)
}

fn random_image(g: GridSpec, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    Array2::from_shape_fn(g.shape(), |_| rng.normal())
}

fn random_data(p: &MotionProblem, seed: u64) -> KSpaceData {
    let mut rng = Rng::new(seed);
    KSpaceData::new(
        p.data().blocks().iter().map(|b| Array2::from_shape_fn(b.dim(), |_| Complex64::new(rng.normal(), rng.normal()))).collect(),
    )
}

fn inner(a: &KSpaceData, b: &KSpaceData) -> f64 {
    a.blocks().iter().zip(b.blocks()).map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u.conj() * v).re).sum::<f64>()).sum()
}

/// Direct non-uniform DFT of a coil image on the centered grid.
fn direct(g: GridSpec, img: &Array2<f64>, kx: f64, ky: f64) -> Complex64 {
    let n = g.n() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..g.n() {
        for k in 0..g.n() {
            let (x, y) = g.coord(j, k);
            acc += img[[j, k]] * Complex64::from_polar(1.0 / n, -2.0 * PI * (kx * x + ky * y) / n);
        }
    }
    acc
}

#[test]
fn dense_oracle_small_grid() {
    let (p, u) = setup(8, 8, 2, 2, OperatorPath::Dfft);
    let g = p.grid();
    let s = random_image(g, 11);
    let y = p.forward(&u, &s).unwrap();
    let h = g.half();
    for i in 0..2 {
        let warped = apply(u.get(i), &Image::new(s.clone()).unwrap()).unwrap();
        for c in 0..2 {
            let coil_img = warped.values() * p.coils().map(c);
            for (m, &(a, b)) in p.masks().points(i).iter().enumerate() {
                let expect = direct(g, &coil_img, b as f64 - h, a as f64 - h);
                assert!((y.block(i)[[c, m]] - expect).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn nufft_matches_direct_sum() {
    let (p, _) = setup(16, 8, 2, 1, OperatorPath::Nufft);
    let g = p.grid();
    let s = random_image(g, 2);
    let u = DeformationSequence::identity(g, 2);
    let y = p.forward(&u, &s).unwrap();
    let pts = p.trajectory().samples_of(p.masks().spokes(1));
    let w = p.dcf(1).unwrap();
    let coil_img = &s * p.coils().map(0);
    let mut err = 0.0f64;
    let mut norm = 0.0f64;
    for (m, &(kx, ky)) in pts.iter().enumerate() {
        let expect = direct(g, &coil_img, kx, ky) * w[m].sqrt();
        err = err.max((y.block(1)[[0, m]] - expect).norm());
        norm = norm.max(expect.norm());
    }
    assert!(err / norm < 1e-5, "{err} / {norm}");
}

#[test]
fn adjointness_both_paths() {
    for path in [OperatorPath::Dfft, OperatorPath::Nufft] {
        let (p, u) = setup(32, 24, 4, 3, path);
        let s = random_image(p.grid(), 7);
        let y = random_data(&p, 8);
        let lhs = inner(&p.forward(&u, &s).unwrap(), &y);
        let rhs = (&s * &p.adjoint(&y, &u).unwrap()).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{path}: {lhs} vs {rhs}");
    }
}

#[test]
fn linear_in_image() {
    let (p, u) = setup(16, 16, 4, 2, OperatorPath::Dfft);
    let a = random_image(p.grid(), 1);
    let b = random_image(p.grid(), 2);
    let lhs = p.forward(&u, &(&a * 2.0 - &b)).unwrap();
    let fa = p.forward(&u, &a).unwrap();
    let fb = p.forward(&u, &b).unwrap();
    for i in 0..4 {
        let d = lhs.block(i) - &(fa.block(i) * Complex64::new(2.0, 0.0) - fb.block(i));
        assert!(d.iter().all(|v| v.norm() < 1e-12));
    }
}

#[test]
fn objective_is_sum_over_excitations() {
    let (p, u) = setup(32, 32, 4, 2, OperatorPath::Dfft);
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let y = p.forward(&u, truth.values()).unwrap();
    let p = p.with_data(y).unwrap();
    let s = random_image(p.grid(), 3);
    let (_, j) = p.residuum(&u, &s).unwrap();
    let sum: f64 = (0..4).map(|i| p.excitation_objective(i, u.get(i), &s)).sum();
    assert!((j - sum).abs() <= 1e-9 * j);
    let (_, j0) = p.residuum(&u, truth.values()).unwrap();
    assert!(j0 < 1e-20);
}

#[test]
fn kappa_matches_normal_operator_on_constant_coil() {
    let g = GridSpec::new(16).unwrap();
    let traj = radial_trajectory(16, 16, g).unwrap();
    let p = MotionProblem::new(traj, 4, CoilMaps::uniform(g), OperatorPath::Dfft).unwrap();
    let u = DeformationSequence::identity(g, 4);
    // the diagonal of the normal operator is the same at every pixel
    let mut e = Array2::zeros(g.shape());
    e[[5, 9]] = 1.0;
    let y = p.forward(&u, &e).unwrap();
    let per: f64 = y.block(2).iter().map(|v| v.norm_sqr()).sum();
    assert!((per - p.kappa(2)).abs() < 1e-12);
}

#[test]
fn noise_power_matches_level() {
    let (p, u) = setup(32, 64, 4, 4, OperatorPath::Dfft);
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let y = p.forward(&u, truth.values()).unwrap();
    let level = 0.05;
    let noisy = add_noise(&y, level, &mut Rng::new(1)).unwrap();
    let expect = level * level * y.norm_sqr();
    assert!((noisy.noise_power / expect - 1.0).abs() < 0.05);
    let realized = noisy.sub(&y).unwrap().norm_sqr();
    assert!((realized - noisy.noise_power).abs() < 1e-9 * realized);
    assert_eq!(noisy, add_noise(&y, level, &mut Rng::new(1)).unwrap());
    assert!(add_noise(&y, -1.0, &mut Rng::new(1)).is_err());
}

#[test]
fn crop_keeps_central_block_scaled() {
    let (p, u) = setup(32, 32, 4, 2, OperatorPath::Dfft);
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let y = p.forward(&u, truth.values()).unwrap();
    let p = p.with_data(y).unwrap();
    let c = p.crop(1).unwrap();
    assert_eq!(c.grid().n(), 16);
    for i in 0..4 {
        assert!((c.kappa(i) - c.masks().count(i) as f64 / 256.0).abs() < 1e-15);
        for (m, &(a, b)) in c.masks().points(i).iter().enumerate() {
            let full = p.masks().points(i).iter().position(|&q| q == (a + 8, b + 8)).unwrap();
            for coil in 0..2 {
                assert!((c.data().block(i)[[coil, m]] - p.data().block(i)[[coil, full]] * 0.5).norm() < 1e-15);
            }
        }
    }
}

#[test]
fn nufft_crop_keeps_inner_samples() {
    let (p, _) = setup(32, 16, 2, 1, OperatorPath::Nufft);
    let c = p.crop(1).unwrap();
    for i in 0..2 {
        let w = c.dcf(i).unwrap();
        assert!(!w.is_empty() && w.len() < p.dcf(i).unwrap().len());
        assert_eq!(c.data().block(i).ncols(), w.len());
    }
}

#[test]
fn select_and_permute_preserve_objective() {
    let (p, u) = setup(16, 16, 4, 3, OperatorPath::Dfft);
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let y = p.forward(&DeformationSequence::identity(p.grid(), 4), truth.values()).unwrap();
    let p = p.with_data(y).unwrap();
    let s = truth.values();
    let sub = p.select(&[2]).unwrap();
    assert_eq!(sub.n_exc(), 1);
    assert!((sub.excitation_objective(0, u.get(2), s) - p.excitation_objective(2, u.get(2), s)).abs() < 1e-12);
    let q = p.permute_coils(&[2, 0, 1]).unwrap();
    let (_, ja) = p.residuum(&u, s).unwrap();
    let (_, jb) = q.residuum(&u, s).unwrap();
    assert!((ja - jb).abs() <= 1e-10 * ja);
    assert!(p.select(&[9]).is_err());
}

#[test]
fn mismatched_inputs_rejected() {
    let (p, _) = setup(16, 16, 4, 1, OperatorPath::Dfft);
    let u = DeformationSequence::identity(p.grid(), 3);
    assert!(p.forward(&u, &Array2::zeros((16, 16))).is_err());
    let u = DeformationSequence::identity(p.grid(), 4);
    assert!(p.forward(&u, &Array2::zeros((8, 8))).is_err());
    let _ = synth_rigid(0.0, (0.0, 0.0), p.grid());
}
