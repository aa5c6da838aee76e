use super::*;
use crate::deform::{fit_rigid, perturb_sequence, synth_rigid, synth_sequence, RigidParams, SequenceConfig};
use crate::forward::{synth_coils, CoilMaps, OperatorPath};
use crate::phantom::{make_phantom, PhantomKind};
use crate::rng::Rng;
use crate::sampling::radial_trajectory;

fn problem(n: usize, spokes: usize, n_exc: usize, u: &DeformationSequence, truth: &Image) -> MotionProblem {
    let g = GridSpec::new(n).unwrap();
    let traj = radial_trajectory(spokes, n, g).unwrap();
    let coils = synth_coils(4, g, &mut Rng::new(3)).unwrap();
    let p = MotionProblem::new(traj, n_exc, coils, OperatorPath::Dfft).unwrap();
    let y = p.forward(u, truth.values()).unwrap();
    p.with_data(y).unwrap()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn displacement_rmse(a: &DeformationSequence, b: &DeformationSequence, mask: &Array2<bool>) -> f64 {
    let (mut e, mut c) = (0.0, 0.0);
    for i in 1..a.len() {
        let (ax, ay) = a.get(i).displacement();
        let (bx, by) = b.get(i).displacement();
        for (p, &m) in mask.indexed_iter() {
            if m {
                e += (ax[p] - bx[p]).powi(2) + (ay[p] - by[p]).powi(2);
                c += 1.0;
            }
        }
    }
    (e / c).sqrt()
}

#[test]
fn crop_zero_is_unchanged() {
    let g = GridSpec::new(32).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, g);
    let p = problem(32, 32, 4, &DeformationSequence::identity(g, 4), &truth);
    let c = crop_kspace(&p, 0).unwrap();
    assert_eq!(c.data(), p.data());
    assert_eq!(c.grid(), p.grid());
}

#[test]
fn crops_compose() {
    let g = GridSpec::new(64).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, g);
    let p = problem(64, 48, 4, &DeformationSequence::identity(g, 4), &truth);
    let twice = crop_kspace(&crop_kspace(&p, 1).unwrap(), 1).unwrap();
    let direct = crop_kspace(&p, 2).unwrap();
    assert_eq!(twice.grid(), direct.grid());
    let diff = twice.data().sub(direct.data()).unwrap().norm_sqr().sqrt();
    assert!(diff <= 1e-12, "{diff}");
    for (a, b) in twice.coils().maps().iter().zip(direct.coils().maps()) {
        assert!(max_abs(&(a - b)) <= 1e-12);
    }
}

#[test]
fn crop_rejects_indivisible_sizes() {
    let g = GridSpec::new(24).unwrap();
    let truth = Image::constant(g, 1.0);
    let p = problem(24, 24, 2, &DeformationSequence::identity(g, 2), &truth);
    assert!(crop_kspace(&p, 4).is_err());
}

#[test]
fn cropped_constant_keeps_its_amplitude() {
    let g = GridSpec::new(32).unwrap();
    let truth = Image::constant(g, 0.7);
    let traj = radial_trajectory(64, 32, g).unwrap();
    let p = MotionProblem::new(traj, 1, CoilMaps::uniform(g), OperatorPath::Dfft).unwrap();
    let u = DeformationSequence::identity(g, 1);
    let y = p.forward(&u, truth.values()).unwrap();
    let p = p.with_data(y).unwrap();
    let c = crop_kspace(&p, 1).unwrap();
    let gc = c.grid();
    let cfg = ReconConfig { cg_iters: 50, ..ReconConfig::default() };
    let r = cg_sense_motion(&c, &DeformationSequence::identity(gc, 1), &Image::zeros(gc), &cfg).unwrap();
    assert!(max_abs(&(r.s.values() - 0.7)) <= 1e-6, "{}", max_abs(&(r.s.values() - 0.7)));
}

#[test]
fn identity_resamples_to_identity() {
    let fine = GridSpec::new(64).unwrap();
    let coarse = GridSpec::new(16).unwrap();
    let down = resample_field(&DeformationField::identity(fine), coarse).unwrap();
    assert!(down.is_identity(1e-12));
    let up = resample_field(&down, fine).unwrap();
    assert!(up.is_identity(1e-12));
}

#[test]
fn upsampled_rigid_field_keeps_its_parameters() {
    let coarse = GridSpec::new(16).unwrap();
    let fine = GridSpec::new(64).unwrap();
    let (theta, t) = (0.05, (0.4, -0.3));
    let f = synth_rigid(theta, t, coarse);
    let up = resample_field(&f, fine).unwrap();
    let p = fit_rigid(&up, None).unwrap();
    assert!((p.theta - theta).abs() <= 1e-3);
    assert!((p.tx - 4.0 * t.0).abs() <= 1e-3 && (p.ty - 4.0 * t.1).abs() <= 1e-3, "{p:?}");
}

#[test]
fn constant_image_survives_resampling() {
    let a = GridSpec::new(32).unwrap();
    let b = GridSpec::new(8).unwrap();
    let s = Image::constant(a, 1.25);
    let back = resample_image(&resample_image(&s, b).unwrap(), a).unwrap();
    assert!(max_abs(&(back.values() - 1.25)) <= 1e-12);
}

#[test]
fn config_validation() {
    assert!(CorrectionConfig::default().validate(64).is_ok());
    assert!(CorrectionConfig { levels: 3, ..Default::default() }.validate(32).is_err());
    assert!(CorrectionConfig { iters: 0, ..Default::default() }.validate(64).is_err());
}

#[test]
fn truth_is_a_fixed_point() {
    let g = GridSpec::new(64).unwrap();
    let truth = make_phantom(PhantomKind::Disks { seed: 1 }, g);
    let u = synth_sequence(&SequenceConfig::rigid(4.0, 0.03), g, 4, &mut Rng::new(5)).unwrap();
    let p = problem(64, 96, 4, &u, &truth);
    let mask = truth.support(0.05 * truth.max());
    let r = correct_motion(&p, &u, &CorrectionConfig::default(), &SplineProjector::default()).unwrap();
    let rmse = displacement_rmse(&r.u, &u, &mask);
    assert!(rmse <= 0.05, "{rmse}");
}

#[test]
fn objective_does_not_increase_within_a_level() {
    let g = GridSpec::new(32).unwrap();
    let truth = make_phantom(PhantomKind::Disks { seed: 2 }, g);
    let u = synth_sequence(&SequenceConfig::rigid(5.0, 0.03), g, 4, &mut Rng::new(6)).unwrap();
    let p = problem(32, 48, 4, &u, &truth);
    let mask = truth.support(0.05 * truth.max());
    let start = perturb_sequence(&u, 1.0, Some(&mask), &mut Rng::new(7)).unwrap();
    let cfg = CorrectionConfig { levels: 1, iters: 3, cg_iters: 10, step: StepRule::default() };
    let r = correct_motion(&p, &start, &cfg, &SplineProjector::default()).unwrap();
    assert_eq!(r.rounds.len(), 6);
    for w in r.rounds.windows(2) {
        assert!(w[0].j_after <= w[0].j_before * (1.0 + 1e-12));
        if w[0].level == w[1].level {
            assert!(w[1].j_before <= w[0].j_after * (1.0 + 1e-9), "{:?}", r.rounds);
        }
    }
    assert!(r.final_j < r.initial_j);
}

#[test]
fn excitations_step_independently() {
    let g = GridSpec::new(32).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, g);
    let u = synth_sequence(&SequenceConfig::rigid(4.0, 0.03), g, 4, &mut Rng::new(8)).unwrap();
    let p = problem(32, 48, 4, &u, &truth);
    let start = perturb_sequence(&u, 0.8, None, &mut Rng::new(9)).unwrap();
    let (a, _) = motion_round(&p, &start, &truth, 0, StepRule::default(), &IdentityProjector).unwrap();
    let mut blocks = p.data().blocks().to_vec();
    blocks[2].fill(num_complex::Complex64::new(0.0, 0.0));
    let q = p.clone().with_data(crate::forward::KSpaceData::new(blocks)).unwrap();
    let (b, _) = motion_round(&q, &start, &truth, 0, StepRule::default(), &IdentityProjector).unwrap();
    for i in [1, 3] {
        assert_eq!(a.get(i), b.get(i));
    }
}

/// Single-level round written out directly from the gradient primitives.
fn reference_round(p: &MotionProblem, u: &DeformationSequence, s: &Image, backtrack: usize) -> DeformationSequence {
    let mut out = u.clone();
    for i in 1..u.len() {
        let f = u.get(i);
        let j0 = p.excitation_objective(i, f, s.values());
        let (gx, gy) = grad_excitation(p, i, f, s.values());
        let (hx, hy) = hessian_excitation(p, i, f, s.values());
        let (mx, my) = (regularize(&hx), regularize(&hy));
        let mut alpha = 1.0;
        for _ in 0..=backtrack {
            let px = Array2::from_shape_fn(gx.dim(), |q| f.px()[q] - alpha * gx[q] / mx[q]);
            let py = Array2::from_shape_fn(gy.dim(), |q| f.py()[q] - alpha * gy[q] / my[q]);
            let cand = DeformationField::new(px, py).unwrap();
            if p.excitation_objective(i, &cand, s.values()) < j0 {
                out.set(i, cand).unwrap();
                break;
            }
            alpha *= 0.5;
        }
    }
    out
}

#[test]
fn identity_projector_round_matches_reference() {
    let g = GridSpec::new(32).unwrap();
    let truth = make_phantom(PhantomKind::SheppLogan, g);
    let u = synth_sequence(&SequenceConfig::rigid(4.0, 0.03), g, 4, &mut Rng::new(10)).unwrap();
    let p = problem(32, 48, 4, &u, &truth);
    let start = perturb_sequence(&u, 0.8, None, &mut Rng::new(11)).unwrap();
    let s = cg_sense_motion(&p, &start, &Image::zeros(g), &ReconConfig::default()).unwrap().s;
    let (a, _) = motion_round(&p, &start, &s, 0, StepRule::default(), &IdentityProjector).unwrap();
    let b = reference_round(&p, &start, &s, 5);
    for i in 1..4 {
        assert!(max_abs(&(a.get(i).px() - b.get(i).px())) <= 1e-10);
        assert!(max_abs(&(a.get(i).py() - b.get(i).py())) <= 1e-10);
    }
}

fn rigid_problem(angles_deg: &[f64]) -> (MotionProblem, Vec<RigidParams>, Image) {
    let g = GridSpec::new(32).unwrap();
    let truth = make_phantom(PhantomKind::Disks { seed: 4 }, g);
    let params: Vec<RigidParams> =
        angles_deg.iter().enumerate().map(|(i, a)| RigidParams::new(a.to_radians(), 0.3 * i as f64, -0.2 * i as f64)).collect();
    let mut fields = vec![DeformationField::identity(g)];
    fields.extend(params[1..].iter().map(|q| q.field(g)));
    let u = DeformationSequence::new(fields).unwrap();
    (problem(32, 48, params.len(), &u, &truth), params, truth)
}

#[test]
fn rigid_truth_is_stationary() {
    let (p, truth_params, _) = rigid_problem(&[0.0, 3.0, -2.0]);
    let r = rigid_refine(&p, &truth_params, &RigidConfig { cg_iters: 30, ..Default::default() }).unwrap();
    for (a, b) in r.params.iter().zip(&truth_params).skip(1) {
        assert!((a.theta - b.theta).abs() <= 1e-4, "{a:?} vs {b:?}");
        assert!((a.tx - b.tx).abs() <= 1e-2 && (a.ty - b.ty).abs() <= 1e-2);
    }
}

#[test]
fn rigid_recovers_small_rotation() {
    let (p, truth_params, _) = rigid_problem(&[0.0, 2.0, -2.0]);
    let init = vec![RigidParams::default(); 3];
    let r = rigid_refine(&p, &init, &RigidConfig { iters: 15, cg_iters: 20, ..Default::default() }).unwrap();
    for (a, b) in r.params.iter().zip(&truth_params).skip(1) {
        assert!((a.theta - b.theta).to_degrees().abs() <= 0.1, "{a:?} vs {b:?}");
    }
    assert!(r.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn rigid_large_rotation_is_flagged_or_recovered() {
    let (p, truth_params, _) = rigid_problem(&[0.0, 15.0]);
    let init = vec![RigidParams::default(); 2];
    let r = rigid_refine(&p, &init, &RigidConfig::default()).unwrap();
    let err = (r.params[1].theta - truth_params[1].theta).to_degrees().abs();
    assert!(err <= 0.1 || !r.converged[1], "silent failure: error {err} degrees");
}
