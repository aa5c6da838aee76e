//! Reconstruction stages, evaluation rows and the full pipeline.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use mocomp::container::{save_array, Tensor};
use mocomp::correct::{correct_motion, rigid_refine, sequence_of, CorrectionResult, RigidConfig, RigidResult};
use mocomp::deform::{fit_rigid, Axis, DeformationSequence};
use mocomp::estimate::{estimate_motion_from, ClassicalRefiner, EstimateRound};
use mocomp::forward::MotionProblem;
use mocomp::gradients::{grad_u, hessian_diag, precondition};
use mocomp::grid::Image;
use mocomp::metrics::{deformation_rmse, image_metrics, static_incompatibility, MetricReport};
use mocomp::recon::{cg_sense_motion, objective, per_excitation_recons, tv_denoise, ReconConfig};

use crate::config::ExperimentConfig;
use crate::dataset::{create_dir, load_image, load_sequence, save_image, save_sequence, simulate, Dataset};
use crate::error::{CliError, Result, StageExt};
use crate::render;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const TIMING_CSV: &str = "timing.csv";

/// Row labels in table order.
pub const METHODS: [&str; 5] = ["static", "rigid", "estimate", "estimate+correct", "+TV"];

/// CG without TV; TV is a separate stage.
pub fn plain_recon(cfg: &ExperimentConfig) -> ReconConfig {
    ReconConfig { tv_lambda: 0.0, ..cfg.recon_config() }
}

pub fn reconstruct(problem: &MotionProblem, u: &DeformationSequence, cfg: &ReconConfig) -> Result<Image> {
    Ok(cg_sense_motion(problem, u, &Image::zeros(problem.grid()), cfg).stage("reconstruct")?.s)
}

pub fn per_excitation(ds: &Dataset) -> Result<Vec<Image>> {
    per_excitation_recons(&ds.problem, &plain_recon(&ds.config)).stage("per-excitation")
}

pub fn estimate(ds: &Dataset, s_list: &[Image]) -> Result<(DeformationSequence, Vec<EstimateRound>)> {
    let cfg = ds.config.estimate_config();
    let refiner = ClassicalRefiner { cfg: cfg.refiner.clone() };
    let init = DeformationSequence::identity(ds.problem.grid(), ds.problem.n_exc());
    estimate_motion_from(s_list, &init, &cfg, &refiner).stage("estimate")
}

pub fn correct(ds: &Dataset, u_est: &DeformationSequence) -> Result<CorrectionResult> {
    let projector = ds.config.projector()?;
    correct_motion(&ds.problem, u_est, &ds.config.correction_config(), projector.as_ref()).stage("correct")
}

/// Rigid Gauss-Newton started from the rigid fit of `u_init` over the support.
pub fn rigid(ds: &Dataset, u_init: &DeformationSequence) -> Result<(DeformationSequence, RigidResult)> {
    let mask = ds.support();
    let params0 = u_init
        .fields()
        .iter()
        .map(|f| fit_rigid(f, Some(&mask)))
        .collect::<mocomp::Result<Vec<_>>>()
        .stage("rigid")?;
    let cfg = RigidConfig { iters: ds.config.correct.rigid_iters, cg_iters: ds.config.correct.cg_iters, ..RigidConfig::default() };
    let r = rigid_refine(&ds.problem, &params0, &cfg).stage("rigid")?;
    let u = sequence_of(&r.params, &ds.problem).stage("rigid")?;
    Ok((u, r))
}

/// Keeps the corrected motion unless the static hypothesis explains the data
/// at least as well; returns the chosen motion, its image and whether the
/// identity was chosen.
pub fn prefer_lower_objective(
    ds: &Dataset,
    corrected: (DeformationSequence, Image),
    static_image: &Image,
) -> Result<(DeformationSequence, Image, bool)> {
    let identity = DeformationSequence::identity(ds.problem.grid(), ds.problem.n_exc());
    let j_cor = objective(&ds.problem, &corrected.0, &corrected.1).stage("correct")?;
    let j_static = objective(&ds.problem, &identity, static_image).stage("correct")?;
    if j_static <= j_cor {
        Ok((identity, static_image.clone(), true))
    } else {
        Ok((corrected.0, corrected.1, false))
    }
}

pub fn denoise(ds: &Dataset, s: &Image) -> Result<Image> {
    tv_denoise(s, ds.config.recon.tv_lambda, ds.config.recon.tv_iters).stage("tv")
}

/// One evaluated method.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub report: MetricReport,
}

/// Serialized form of a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub config: String,
    pub method: String,
    pub res: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub deformation_rmse: Option<f64>,
    pub static_incompatibility: f64,
}

impl CsvRow {
    pub fn new(config: &str, row: &Row) -> Self {
        let r = &row.report;
        CsvRow {
            config: config.into(),
            method: row.method.clone(),
            res: r.res,
            psnr: r.image.psnr,
            ssim: r.image.ssim,
            mse: r.image.mse,
            deformation_rmse: r.deformation_rmse,
            static_incompatibility: r.static_incompatibility,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub config: String,
    pub s_i: f64,
    pub estimate: f64,
    pub correct: f64,
    pub total: f64,
}

/// Reconstructions available for evaluation; absent stages are skipped.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub static_image: Image,
    pub rigid: Option<(DeformationSequence, Image)>,
    pub estimate: Option<(DeformationSequence, Image)>,
    pub corrected: Option<(DeformationSequence, Image)>,
    /// Denoised image of the final motion (corrected, else rigid).
    pub tv: Option<Image>,
}

impl Artifacts {
    fn final_motion(&self) -> Option<&DeformationSequence> {
        self.corrected.as_ref().or(self.rigid.as_ref()).map(|(u, _)| u)
    }
}

pub fn evaluate(ds: &Dataset, a: &Artifacts) -> Result<Vec<Row>> {
    let range = ds.truth.max() - ds.truth.min();
    let mask = ds.support();
    let incompat = static_incompatibility(&ds.problem).stage("evaluate")?;
    let identity = DeformationSequence::identity(ds.problem.grid(), ds.problem.n_exc());
    let row = |method: &str, u: &DeformationSequence, s: &Image| -> Result<Row> {
        Ok(Row {
            method: method.into(),
            report: MetricReport {
                res: objective(&ds.problem, u, s).stage("evaluate")?,
                image: image_metrics(s, &ds.truth, range).stage("evaluate")?,
                deformation_rmse: Some(deformation_rmse(u, &ds.u_ref, &mask).stage("evaluate")?),
                static_incompatibility: incompat,
            },
        })
    };
    let mut rows = vec![row("static", &identity, &a.static_image)?];
    if let Some((u, s)) = &a.rigid {
        rows.push(row("rigid", u, s)?);
    }
    if let Some((u, s)) = &a.estimate {
        rows.push(row("estimate", u, s)?);
    }
    if let Some((u, s)) = &a.corrected {
        rows.push(row("estimate+correct", u, s)?);
    }
    if let (Some(s), Some(u)) = (&a.tv, a.final_motion()) {
        rows.push(row("+TV", u, s)?);
    }
    Ok(rows)
}

/// Loads whatever stage outputs exist in a run directory.
pub fn load_artifacts(ds: &Dataset, dir: &Path) -> Result<Artifacts> {
    let pair = |u: &str, s: &str| -> Result<Option<(DeformationSequence, Image)>> {
        let (pu, ps) = (dir.join(u), dir.join(s));
        if pu.exists() && ps.exists() {
            Ok(Some((load_sequence(&pu)?, load_image(&ps)?)))
        } else {
            Ok(None)
        }
    };
    let static_path = dir.join("s_static.snfl");
    let static_image = if static_path.exists() {
        load_image(&static_path)?
    } else {
        let id = DeformationSequence::identity(ds.problem.grid(), ds.problem.n_exc());
        reconstruct(&ds.problem, &id, &plain_recon(&ds.config))?
    };
    let tv_path = dir.join("s_tv.snfl");
    Ok(Artifacts {
        static_image,
        rigid: pair("u_rigid.snfl", "s_rigid.snfl")?,
        estimate: pair("u_est.snfl", "s_est.snfl")?,
        corrected: pair("u_cor.snfl", "s_cor.snfl")?,
        tv: if tv_path.exists() { Some(load_image(&tv_path)?) } else { None },
    })
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, e)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_io(path, e))).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

/// Fixed-width text table of report rows.
pub fn format_table(rows: &[CsvRow], timings: &[Timing]) -> String {
    let mut out = format!(
        "{:<16} {:<17} {:>12} {:>9} {:>7} {:>10} {:>9} {:>12} {:>8} {:>8} {:>8}\n",
        "config", "method", "res", "psnr_db", "ssim", "mse_pct", "rmse_px", "static_inc", "t_s_i", "t_est", "t_cor"
    );
    for r in rows {
        let t = timings.iter().find(|t| t.config == r.config);
        let secs = |f: fn(&Timing) -> f64| t.map(|t| format!("{:.2}", f(t))).unwrap_or_else(|| "-".into());
        out += &format!(
            "{:<16} {:<17} {:>12.5e} {:>9.2} {:>7.4} {:>10.4} {:>9} {:>12.5e} {:>8} {:>8} {:>8}\n",
            r.config,
            r.method,
            r.res,
            r.psnr,
            r.ssim,
            r.mse,
            fmt_opt(r.deformation_rmse),
            r.static_incompatibility,
            secs(|t| t.s_i),
            secs(|t| t.estimate),
            secs(|t| t.correct),
        );
    }
    out
}

/// Writes `report.csv` and `report.txt`; timings live in `timing.csv` only.
pub fn write_report(dir: &Path, config: &str, rows: &[Row]) -> Result<Vec<CsvRow>> {
    let csv_rows: Vec<CsvRow> = rows.iter().map(|r| CsvRow::new(config, r)).collect();
    write_csv(&dir.join(REPORT_CSV), &csv_rows)?;
    let path = dir.join(REPORT_TXT);
    fs::write(&path, format_table(&csv_rows, &[])).map_err(|e| CliError::io(&path, e))?;
    Ok(csv_rows)
}

pub fn save_stack(path: &Path, images: &[Image]) -> Result<()> {
    let g = images[0].grid();
    let mut a = Array3::zeros((images.len(), g.n(), g.n()));
    for (i, s) in images.iter().enumerate() {
        a.index_axis_mut(NdAxis(0), i).assign(s.values());
    }
    save_array(path, &Tensor::Real(a.into_dyn())).map_err(|e| CliError::io(path, e))
}

pub fn save_estimate_log(path: &Path, rounds: &[EstimateRound]) -> Result<()> {
    #[derive(Serialize)]
    struct R {
        round: usize,
        update_rms: f64,
    }
    let rows: Vec<R> = rounds.iter().enumerate().map(|(i, r)| R { round: i + 1, update_rms: r.update_rms }).collect();
    write_csv(path, &rows)
}

pub fn save_correction_log(path: &Path, c: &CorrectionResult) -> Result<()> {
    #[derive(Serialize)]
    struct R {
        level: u32,
        j_before: f64,
        j_after: f64,
        accepted: usize,
    }
    let rows: Vec<R> = c
        .rounds
        .iter()
        .map(|r| R { level: r.level, j_before: r.j_before, j_after: r.j_after, accepted: r.accepted })
        .collect();
    write_csv(path, &rows)
}

pub fn save_rigid_log(path: &Path, r: &RigidResult) -> Result<()> {
    #[derive(Serialize)]
    struct R {
        excitation: usize,
        theta_deg: f64,
        tx: f64,
        ty: f64,
        converged: bool,
        singular: bool,
    }
    let rows: Vec<R> = r
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| R {
            excitation: i,
            theta_deg: p.theta.to_degrees(),
            tx: p.tx,
            ty: p.ty,
            converged: r.converged[i],
            singular: r.singular[i],
        })
        .collect();
    write_csv(path, &rows)
}

/// Previews windowed to the reference range.
pub fn save_previews(dir: &Path, ds: &Dataset, images: &[(&str, &Image)]) -> Result<()> {
    let png = dir.join("png");
    create_dir(&png)?;
    let (lo, hi) = (ds.truth.min(), ds.truth.max());
    render::save_gray(&png.join("s_ref.png"), ds.truth.values(), lo, hi)?;
    for (name, s) in images {
        render::save_gray(&png.join(format!("{name}.png")), s.values(), lo, hi)?;
    }
    Ok(())
}

/// Displacement maps of every excitation, sharing the reference's scale.
pub fn save_deformation_maps(dir: &Path, ds: &Dataset, name: &str, u: &DeformationSequence) -> Result<()> {
    let png = dir.join("png");
    create_dir(&png)?;
    let max_len = ds
        .u_ref
        .fields()
        .iter()
        .map(|f| {
            let (dx, dy) = f.displacement();
            dx.iter().zip(&dy).fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
        })
        .fold(0.0f64, f64::max);
    let max_len = if max_len > 0.0 { Some(max_len) } else { None };
    for (i, f) in u.fields().iter().enumerate() {
        render::save_deformation(&png.join(format!("{name}_{i:02}.png")), f, max_len)?;
    }
    Ok(())
}

/// `H̄⁻¹ ∂J/∂p` of the last excitation, one map per axis.
pub fn save_gradient_maps(dir: &Path, ds: &Dataset, u: &DeformationSequence, s: &Image) -> Result<()> {
    let png = dir.join("png");
    create_dir(&png)?;
    let g = grad_u(&ds.problem, u, s).stage("gradient")?;
    let h = hessian_diag(&ds.problem, u, s).stage("gradient")?;
    let pg = precondition(&g, &h).stage("gradient")?;
    let last = ds.problem.n_exc() - 1;
    render::save_signed(&png.join(format!("grad_x_{last:02}.png")), pg.get(last, Axis::X))?;
    render::save_signed(&png.join(format!("grad_y_{last:02}.png")), pg.get(last, Axis::Y))
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub rows: Vec<CsvRow>,
    pub timing: Timing,
    /// Rigid excitations that did not meet the convergence tolerances.
    pub rigid_unconverged: Vec<usize>,
}

/// Simulates the configured dataset into `dir` and runs every stage.
///
/// `timing.csv` is the only output that differs between reruns.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutcome> {
    let t_total = Instant::now();
    let ds = simulate(cfg)?;
    ds.save(dir)?;
    let plain = plain_recon(cfg);
    let identity = DeformationSequence::identity(ds.problem.grid(), ds.problem.n_exc());
    let static_image = reconstruct(&ds.problem, &identity, &plain)?;
    save_image(&dir.join("s_static.snfl"), &static_image)?;

    let t = Instant::now();
    let s_list = per_excitation(&ds)?;
    let t_si = t.elapsed().as_secs_f64();
    save_stack(&dir.join("s_exc.snfl"), &s_list)?;

    let t = Instant::now();
    let (u_est, est_rounds) = estimate(&ds, &s_list)?;
    let t_est = t.elapsed().as_secs_f64();
    save_sequence(&dir.join("u_est.snfl"), &u_est)?;
    save_estimate_log(&dir.join("estimate.csv"), &est_rounds)?;
    let s_est = reconstruct(&ds.problem, &u_est, &plain)?;
    save_image(&dir.join("s_est.snfl"), &s_est)?;

    let t = Instant::now();
    let mut artifacts = Artifacts { static_image, rigid: None, estimate: Some((u_est.clone(), s_est.clone())), corrected: None, tv: None };
    let mut rigid_unconverged = Vec::new();
    if cfg.correct.rigid_baseline {
        let (u, r) = rigid(&ds, &u_est)?;
        rigid_unconverged = (1..r.converged.len()).filter(|&i| !r.converged[i]).collect();
        save_rigid_log(&dir.join("rigid.csv"), &r)?;
        let s = reconstruct(&ds.problem, &u, &plain)?;
        save_sequence(&dir.join("u_rigid.snfl"), &u)?;
        save_image(&dir.join("s_rigid.snfl"), &s)?;
        artifacts.rigid = Some((u, s));
    } else {
        let c = correct(&ds, &u_est)?;
        save_correction_log(&dir.join("correction.csv"), &c)?;
        let s = reconstruct(&ds.problem, &c.u, &plain)?;
        let (u, s, _) = prefer_lower_objective(&ds, (c.u, s), &artifacts.static_image)?;
        save_sequence(&dir.join("u_cor.snfl"), &u)?;
        save_image(&dir.join("s_cor.snfl"), &s)?;
        artifacts.corrected = Some((u, s));
    }
    let t_cor = t.elapsed().as_secs_f64();

    if cfg.recon.tv_lambda > 0.0 {
        let (_, s) = artifacts.corrected.as_ref().or(artifacts.rigid.as_ref()).expect("a final motion exists");
        let s_tv = denoise(&ds, s)?;
        save_image(&dir.join("s_tv.snfl"), &s_tv)?;
        artifacts.tv = Some(s_tv);
    }

    let rows = evaluate(&ds, &artifacts)?;

    let mut previews: Vec<(&str, &Image)> = vec![("s_static", &artifacts.static_image), ("s_est", &s_est)];
    if let Some((_, s)) = &artifacts.rigid {
        previews.push(("s_rigid", s));
    }
    if let Some((_, s)) = &artifacts.corrected {
        previews.push(("s_cor", s));
    }
    if let Some(s) = &artifacts.tv {
        previews.push(("s_tv", s));
    }
    save_previews(dir, &ds, &previews)?;
    save_deformation_maps(dir, &ds, "u_ref", &ds.u_ref)?;
    if let Some(u) = artifacts.final_motion() {
        let name = if artifacts.corrected.is_some() { "u_cor" } else { "u_rigid" };
        save_deformation_maps(dir, &ds, name, u)?;
    }
    save_gradient_maps(dir, &ds, &u_est, &s_est)?;

    let timing = Timing { config: cfg.name.clone(), s_i: t_si, estimate: t_est, correct: t_cor, total: t_total.elapsed().as_secs_f64() };
    let csv_rows = write_report(dir, &cfg.name, &rows)?;
    write_csv(&dir.join(TIMING_CSV), std::slice::from_ref(&timing))?;
    Ok(PipelineOutcome { rows: csv_rows, timing, rigid_unconverged })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Compares analytic and central-difference derivatives at random pixels of
/// excitations `1..`, perturbing `u` so no target sits near a cell boundary.
pub fn gradient_check(
    problem: &MotionProblem,
    u: &DeformationSequence,
    s: &Image,
    pixels: usize,
    step: f64,
    rng: &mut mocomp::rng::Rng,
) -> Result<GradCheck> {
    let n = problem.grid().n();
    if problem.n_exc() < 2 {
        return Err(CliError::Config("gradcheck needs at least two excitations".into()));
    }
    let margin = 2.0 * step + 0.01;
    let fields = u
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut f = f.clone();
            if i > 0 {
                for axis in [Axis::X, Axis::Y] {
                    for a in f.param_mut(axis).iter_mut() {
                        *a += rng.uniform(-0.4, 0.4);
                        let frac = (*a + 0.5 * n as f64 - 0.5).rem_euclid(1.0);
                        if frac < margin {
                            *a += margin;
                        } else if frac > 1.0 - margin {
                            *a -= margin;
                        }
                    }
                }
            }
            f
        })
        .collect();
    let u = DeformationSequence::new(fields).stage("gradcheck")?;
    let mut out = GradCheck { checked: 0, max_rel_err: 0.0 };
    for _ in 0..pixels * 20 {
        if out.checked == pixels {
            break;
        }
        let i = 1 + rng.below(problem.n_exc() - 1);
        let pixel = (rng.below(n), rng.below(n));
        let axis = if rng.below(2) == 0 { Axis::X } else { Axis::Y };
        let (gx, gy) = mocomp::gradients::grad_excitation(problem, i, u.get(i), s.values());
        let g = if axis == Axis::X { gx[pixel] } else { gy[pixel] };
        if g.abs() <= 1e-8 {
            continue;
        }
        let err = mocomp::gradients::fd_check(problem, &u, s, i, pixel, axis, step).stage("gradcheck")?;
        out.max_rel_err = out.max_rel_err.max(err);
        out.checked += 1;
    }
    Ok(out)
}
