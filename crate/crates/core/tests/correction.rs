use mocomp::correct::{correct_motion, CorrectionConfig, SplineProjector};
use mocomp::deform::{perturb_sequence, synth_sequence, DeformationSequence, SequenceConfig};
use mocomp::forward::{synth_coils, MotionProblem, OperatorPath};
use mocomp::grid::GridSpec;
use mocomp::phantom::{make_phantom, PhantomKind};
use mocomp::rng::{stream, Rng};
use mocomp::sampling::radial_trajectory;
use ndarray::Array2;

fn rmse(a: &DeformationSequence, b: &DeformationSequence, mask: &Array2<bool>) -> f64 {
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
fn perturbed_truth_is_corrected() {
    let g = GridSpec::new(64).unwrap();
    let truth = make_phantom(PhantomKind::Disks { seed: 0 }, g);
    let mask = truth.support(0.05 * truth.max());
    let rng = Rng::new(12);
    let u = synth_sequence(&SequenceConfig::rigid(5.0, 0.02), g, 8, &mut rng.substream(stream::MOTION)).unwrap();
    let start = perturb_sequence(&u, 2.0, Some(&mask), &mut rng.substream(stream::PERTURBATION)).unwrap();
    let traj = radial_trajectory(96, 64, g).unwrap();
    let coils = synth_coils(4, g, &mut rng.substream(stream::COILS)).unwrap();
    let p = MotionProblem::new(traj, 8, coils, OperatorPath::Dfft).unwrap();
    let y = p.forward(&u, truth.values()).unwrap();
    let p = p.with_data(y).unwrap();
    let cfg = CorrectionConfig { iters: 16, ..Default::default() };
    let r = correct_motion(&p, &start, &cfg, &SplineProjector::default()).unwrap();
    assert!(r.final_j <= 0.2 * r.initial_j, "{} -> {}", r.initial_j, r.final_j);
    let err = rmse(&r.u, &u, &mask);
    assert!(err <= 0.5, "deformation RMSE {err}");
    let mut prev = r.initial_j;
    for l in r.levels.iter().filter(|l| l.kept) {
        assert!(l.j <= prev, "{:?}", r.levels);
        prev = l.j;
    }
}
