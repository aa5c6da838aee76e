use super::*;
use crate::deform::{synth_sequence, SequenceConfig};
use crate::forward::{synth_coils, CoilMaps, OperatorPath};
use crate::grid::GridSpec;
use crate::phantom::{make_phantom, PhantomKind};
use crate::rng::Rng;
use crate::sampling::{radial_trajectory, CenteredDft};
use proptest::prelude::*;

fn problem(n: usize, spokes: usize, n_exc: usize, coils: usize) -> MotionProblem {
    let g = GridSpec::new(n).unwrap();
    let traj = radial_trajectory(spokes, n, g).unwrap();
    let coils = synth_coils(coils, g, &mut Rng::new(4)).unwrap();
    MotionProblem::new(traj, n_exc, coils, OperatorPath::Dfft).unwrap()
}

fn with_truth(p: MotionProblem, u: &DeformationSequence, s: &Image) -> MotionProblem {
    let y = p.forward(u, s.values()).unwrap();
    p.with_data(y).unwrap()
}

fn psnr(a: &Image, b: &Image) -> f64 {
    let range = b.max() - b.min();
    let mse = (a.values() - b.values()).mapv(|v| v * v).mean().unwrap();
    10.0 * (range * range / mse).log10()
}

#[test]
fn exact_start_is_fixed_point() {
    let p = problem(32, 32, 4, 2);
    let u = synth_sequence(&SequenceConfig::rigid(5.0, 0.02), p.grid(), 4, &mut Rng::new(1)).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let p = with_truth(p, &u, &truth);
    let out = cg_sense_motion(&p, &u, &truth, &ReconConfig::with_iters(5)).unwrap();
    assert!(out.history[0] <= 1e-20);
    let diff = (out.s.values() - truth.values()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(diff <= 1e-12, "{diff}");
}

#[test]
fn nyquist_static_recovery() {
    let p = problem(64, 101, 1, 4);
    let u = DeformationSequence::identity(p.grid(), 1);
    let truth = make_phantom(PhantomKind::Disks { seed: 3 }, p.grid());
    let p = with_truth(p, &u, &truth);
    let out = cg_sense_motion(&p, &u, &Image::zeros(p.grid()), &ReconConfig::with_iters(50)).unwrap();
    let q = psnr(&out.s, &truth);
    assert!(q >= 50.0, "PSNR {q}");
}

#[test]
fn linear_mode_matches_reference_cg() {
    let p = problem(16, 16, 2, 2);
    let g = p.grid();
    let u = synth_sequence(&SequenceConfig::rigid(6.0, 0.03), g, 2, &mut Rng::new(2)).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, g);
    let p = with_truth(p, &u, &truth);
    let cfg = ReconConfig { positivity: false, tol: 0.0, ..ReconConfig::with_iters(6) };
    let out = cg_sense_motion(&p, &u, &Image::zeros(g), &cfg).unwrap();

    // textbook CG on 𝒜*𝒜 s = 𝒜* y
    let b = p.adjoint_data(&u).unwrap();
    let mut x = Array2::<f64>::zeros(g.shape());
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..6 {
        let ad = p.normal(&u, &d).unwrap();
        let alpha = rr / dot(&d, &ad);
        x = x + &(&d * alpha);
        r = r - &(&ad * alpha);
        let rr_new = dot(&r, &r);
        d = &r + &(&d * (rr_new / rr));
        rr = rr_new;
    }
    let err = (out.s.values() - &x).mapv(|v| v * v).sum().sqrt() / x.mapv(|v| v * v).sum().sqrt();
    assert!(err <= 1e-8, "{err}");
}

#[test]
fn coil_order_does_not_matter() {
    let p = problem(32, 32, 4, 3);
    let u = synth_sequence(&SequenceConfig::rigid(6.0, 0.03), p.grid(), 4, &mut Rng::new(3)).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let p = with_truth(p, &u, &truth);
    let q = p.permute_coils(&[1, 2, 0]).unwrap();
    let cfg = ReconConfig::with_iters(8);
    let a = cg_sense_motion(&p, &u, &Image::zeros(p.grid()), &cfg).unwrap();
    let b = cg_sense_motion(&q, &u, &Image::zeros(p.grid()), &cfg).unwrap();
    let diff = (a.s.values() - b.s.values()).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
    assert!(diff <= 1e-10, "{diff}");
}

/// Central `keep x keep` block of the spectrum, back on the full grid.
fn low_pass(s: &Image, keep: usize) -> Array2<f64> {
    let n = s.grid().n();
    let dft = CenteredDft::new(n);
    let mut f = dft.forward_real(s.values());
    let (lo, hi) = ((n - keep) / 2, (n + keep) / 2);
    for ((j, k), v) in f.indexed_iter_mut() {
        if j < lo || j >= hi || k < lo || k >= hi {
            *v = 0.0.into();
        }
    }
    dft.inverse_real(&f)
}

#[test]
fn excitation_images_share_low_frequencies() {
    let p = problem(64, 64, 8, 4);
    let g = p.grid();
    let truth = make_phantom(PhantomKind::SheppLogan, g);
    let p = with_truth(p, &DeformationSequence::identity(g, 8), &truth);
    let imgs = per_excitation_recons(&p, &ReconConfig::default()).unwrap();
    let lp: Vec<_> = imgs.iter().map(|s| low_pass(s, 8)).collect();
    for a in 0..8 {
        for b in a + 1..8 {
            let nmse = (&lp[a] - &lp[b]).mapv(|v| v * v).sum() / lp[a].mapv(|v| v * v).sum();
            assert!(nmse <= 0.05, "{a},{b}: {nmse}");
        }
    }
}

#[test]
fn per_excitation_uses_own_data_only() {
    let p = problem(32, 32, 4, 2);
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let g = p.grid();
    let p = with_truth(p, &DeformationSequence::identity(g, 4), &truth);
    let cfg = ReconConfig::default();
    let a = per_excitation_recon(&p, 1, &cfg).unwrap();
    let mut y = p.data().clone();
    let mut blocks: Vec<_> = y.blocks().to_vec();
    blocks[3].mapv_inplace(|v| v * 3.0);
    blocks[0].fill(0.0.into());
    y = crate::forward::KSpaceData::new(blocks);
    let q = p.clone().with_data(y).unwrap();
    assert_eq!(a, per_excitation_recon(&q, 1, &cfg).unwrap());
    assert!(per_excitation_recon(&p, 4, &cfg).is_err());
}

#[test]
fn single_excitation_equals_joint_recon() {
    let p = problem(32, 32, 1, 2);
    let truth = make_phantom(PhantomKind::SheppLogan, p.grid());
    let u = DeformationSequence::identity(p.grid(), 1);
    let p = with_truth(p, &u, &truth);
    let cfg = ReconConfig::default();
    let joint = cg_sense_motion(&p, &u, &Image::zeros(p.grid()), &cfg).unwrap();
    assert_eq!(per_excitation_recon(&p, 0, &cfg).unwrap(), joint.s);
}

#[test]
fn uniform_coil_full_problem_converges() {
    let g = GridSpec::new(16).unwrap();
    let traj = radial_trajectory(40, 16, g).unwrap();
    let p = MotionProblem::new(traj, 1, CoilMaps::uniform(g), OperatorPath::Dfft).unwrap();
    let u = DeformationSequence::identity(g, 1);
    let truth = make_phantom(PhantomKind::Constant, g);
    let p = with_truth(p, &u, &truth);
    let out = cg_sense_motion(&p, &u, &Image::zeros(g), &ReconConfig::with_iters(30)).unwrap();
    assert!(out.residual_norm < 1e-6 * p.data().norm_sqr().sqrt());
}

#[test]
fn zero_iterations_rejected() {
    let p = problem(16, 16, 1, 1);
    let u = DeformationSequence::identity(p.grid(), 1);
    assert!(cg_sense_motion(&p, &u, &Image::zeros(p.grid()), &ReconConfig::with_iters(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn history_non_increasing(seed in 0u64..1000, positivity in any::<bool>()) {
        let p = problem(16, 16, 4, 2);
        let g = p.grid();
        let mut rng = Rng::new(seed);
        let u = synth_sequence(&SequenceConfig::rigid(6.0, 0.03), g, 4, &mut rng).unwrap();
        let noise = Image::from_fn(g, |_, _| rng.normal());
        let truth = make_phantom(PhantomKind::SheppLogan, g);
        let mixed = Image::new(truth.values() + &(noise.values() * 0.3)).unwrap();
        let p = with_truth(p, &u, &mixed);
        let cfg = ReconConfig { positivity, ..ReconConfig::with_iters(12) };
        let out = cg_sense_motion(&p, &DeformationSequence::identity(g, 4), &Image::zeros(g), &cfg).unwrap();
        prop_assert!(out.history.iter().all(|v| v.is_finite()));
        for w in out.history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        if positivity {
            prop_assert!(out.s.is_nonnegative());
        }
    }

    #[test]
    fn tv_never_increases_variation(seed in 0u64..1000, lambda in 0.0f64..2.0) {
        let g = GridSpec::new(16).unwrap();
        let mut rng = Rng::new(seed);
        let s = Image::from_fn(g, |_, _| rng.uniform(0.0, 1.0));
        let out = tv_denoise(&s, lambda, 50).unwrap();
        prop_assert!(total_variation(out.values()) <= total_variation(s.values()) + 1e-12);
    }
}

#[test]
fn tv_zero_weight_is_identity() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = Rng::new(1);
    let s = Image::from_fn(g, |_, _| rng.normal());
    assert_eq!(tv_denoise(&s, 0.0, 10).unwrap(), s);
    assert!(tv_denoise(&s, -1.0, 10).is_err());
}

#[test]
fn tv_flattens_noise_and_keeps_edges() {
    let g = GridSpec::new(64).unwrap();
    let mut rng = Rng::new(7);
    let clean = Image::from_fn(g, |x, _| if x < 0.0 { 0.2 } else { 0.8 });
    let noisy = Image::new(clean.values().mapv(|v| v + 0.02 * rng.normal())).unwrap();
    let out = tv_denoise(&noisy, 0.05, 300).unwrap();
    let flat_var = |img: &Image| {
        let v: Vec<f64> = (8..56).flat_map(|j| (4..24).map(move |k| (j, k))).map(|p| img.values()[p]).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    assert!(flat_var(&out) * 10.0 <= flat_var(&noisy), "{} vs {}", flat_var(&out), flat_var(&noisy));
    // the step between columns 31 and 32 survives
    for j in 8..56 {
        let jump = out.values()[[j, 33]] - out.values()[[j, 30]];
        assert!(jump > 0.5, "row {j}: {jump}");
    }
}
