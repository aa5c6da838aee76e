//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use mocomp::deform::DeformationSequence;
use mocomp::rng::{stream, Rng};

use crate::config::{resolve_output, ExperimentConfig, Profile};
use crate::dataset::{dataset_dir, load_sequence, save_image, save_sequence, simulate, Dataset};
use crate::error::{CliError, Result, StageExt};
use crate::pipeline::{self, format_table, Artifacts};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "mocomp", version, about = "Motion-compensated multishot radial MRI reconstruction")]
pub struct Cli {
    /// Worker threads (0 uses all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ExperimentArgs {
    /// Built-in profile the config file is layered over.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// TOML config (a run manifest also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; overrides the config's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let profile: Profile = self.profile.parse()?;
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, profile)?,
            None => ExperimentConfig::profile(profile),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let dir = dataset_dir(self.out.clone(), &cfg);
        Ok((cfg, dir))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectorArg {
    Spline,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Dfft,
    Nufft,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Simulate(ExperimentArgs),
    /// Per-excitation reconstructions and registration into `u_est.snfl`.
    Estimate {
        dir: PathBuf,
    },
    /// Refine a motion estimate against the measurements.
    Correct {
        dir: PathBuf,
        /// Initial motion (defaults to `u_est.snfl` in the run directory).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        levels: Option<u32>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum)]
        projector: Option<ProjectorArg>,
        /// Run the rigid Gauss-Newton baseline instead.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// CG reconstruction for a given motion.
    Reconstruct {
        dir: PathBuf,
        /// Motion file, or `identity`.
        #[arg(long, default_value = "identity")]
        motion: String,
        /// Operator path; one other than the dataset's re-simulates the
        /// measurements with it from the stored config.
        #[arg(long, value_enum)]
        sampling: Option<SamplingArg>,
        /// TV weight of the post-denoising.
        #[arg(long)]
        tv: Option<f64>,
        /// Output name; writes `s_<name>.snfl`.
        #[arg(long, default_value = "recon")]
        name: String,
    },
    /// Metrics of every reconstruction found in a run directory.
    Evaluate {
        dir: PathBuf,
    },
    /// Simulate, estimate, correct, reconstruct and evaluate.
    Pipeline {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Merge run reports into one table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Merged CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the motion gradient.
    Gradcheck {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long, default_value_t = 100)]
        pixels: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

/// Runs a parsed command in a pool of the requested size.
pub fn run(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, out))
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

fn load(dir: &Path) -> Result<(PathBuf, Dataset)> {
    let dir = resolve_output(dir);
    let ds = Dataset::load(&dir)?;
    Ok((dir, ds))
}

fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> Result<()> {
    match command {
        Command::Simulate(args) => {
            let (cfg, dir) = args.resolve()?;
            let ds = simulate(&cfg)?;
            ds.save(&dir)?;
            let info = ds.manifest_info(&[]);
            say(
                out,
                &format!(
                    "simulated {}: N={} N_exc={} spokes={} spokes_per_excitation={} coils={} noise_power={:e}\nwrote {}\n",
                    cfg.name,
                    cfg.grid.n,
                    cfg.sampling.excitations,
                    cfg.sampling.spokes,
                    info.spokes_per_excitation,
                    cfg.sampling.coils,
                    info.noise_power,
                    dir.display()
                ),
            )
        }
        Command::Estimate { dir } => {
            let (dir, ds) = load(&dir)?;
            let s_list = pipeline::per_excitation(&ds)?;
            pipeline::save_stack(&dir.join("s_exc.snfl"), &s_list)?;
            let (u, rounds) = pipeline::estimate(&ds, &s_list)?;
            save_sequence(&dir.join("u_est.snfl"), &u)?;
            pipeline::save_estimate_log(&dir.join("estimate.csv"), &rounds)?;
            let s = pipeline::reconstruct(&ds.problem, &u, &pipeline::plain_recon(&ds.config))?;
            save_image(&dir.join("s_est.snfl"), &s)?;
            let last = rounds.last().map(|r| r.update_rms).unwrap_or(0.0);
            say(out, &format!("estimated motion: {} rounds, last update RMS {last:.4} px\n", rounds.len()))
        }
        Command::Correct { dir, init, levels, iters, projector, baseline } => {
            let (dir, mut ds) = load(&dir)?;
            let c = &mut ds.config.correct;
            if let Some(l) = levels {
                c.levels = l;
            }
            if let Some(i) = iters {
                c.iters = i;
            }
            if let Some(p) = projector {
                c.projector = match p {
                    ProjectorArg::Spline => "spline".into(),
                    ProjectorArg::Identity => "identity".into(),
                };
            }
            ds.config.validate()?;
            let init = init.unwrap_or_else(|| dir.join("u_est.snfl"));
            let u0 = load_sequence(&init)?;
            let plain = pipeline::plain_recon(&ds.config);
            if baseline == Some(Baseline::Rigid) {
                let (u, r) = pipeline::rigid(&ds, &u0)?;
                pipeline::save_rigid_log(&dir.join("rigid.csv"), &r)?;
                let s = pipeline::reconstruct(&ds.problem, &u, &plain)?;
                save_sequence(&dir.join("u_rigid.snfl"), &u)?;
                save_image(&dir.join("s_rigid.snfl"), &s)?;
                let bad: Vec<usize> = (1..r.converged.len()).filter(|&i| !r.converged[i]).collect();
                say(out, &format!("rigid baseline: J {:.6e}\n", r.history.last().copied().unwrap_or(f64::NAN)))?;
                if !bad.is_empty() {
                    say(out, &format!("warning: rigid refinement did not converge for excitations {bad:?}\n"))?;
                }
                Ok(())
            } else {
                let c = pipeline::correct(&ds, &u0)?;
                pipeline::save_correction_log(&dir.join("correction.csv"), &c)?;
                let s = pipeline::reconstruct(&ds.problem, &c.u, &plain)?;
                let static_image = pipeline::load_artifacts(&ds, &dir)?.static_image;
                let (u, s, fallback) = pipeline::prefer_lower_objective(&ds, (c.u, s), &static_image)?;
                save_sequence(&dir.join("u_cor.snfl"), &u)?;
                save_image(&dir.join("s_cor.snfl"), &s)?;
                say(out, &format!("corrected motion: J {:.6e} -> {:.6e}\n", c.initial_j, c.final_j))?;
                if fallback {
                    say(out, "static reconstruction has the lower objective; kept the identity motion\n")?;
                }
                Ok(())
            }
        }
        Command::Reconstruct { dir, motion, sampling, tv, name } => {
            let (dir, mut ds) = load(&dir)?;
            if let Some(op) = sampling {
                let op = match op {
                    SamplingArg::Dfft => "dfft",
                    SamplingArg::Nufft => "nufft",
                };
                if ds.config.sampling.operator != op {
                    ds.config.sampling.operator = op.into();
                    ds = simulate(&ds.config)?;
                }
            }
            if let Some(l) = tv {
                ds.config.recon.tv_lambda = l;
            }
            ds.config.validate()?;
            let u = if motion == "identity" {
                DeformationSequence::identity(ds.problem.grid(), ds.problem.n_exc())
            } else {
                let p = PathBuf::from(&motion);
                let p = if p.is_absolute() || p.exists() { p } else { dir.join(p) };
                load_sequence(&p)?
            };
            let s = pipeline::reconstruct(&ds.problem, &u, &ds.config.recon_config())?;
            save_image(&dir.join(format!("s_{name}.snfl")), &s)?;
            pipeline::save_previews(&dir, &ds, &[(&format!("s_{name}"), &s)])?;
            let j = mocomp::recon::objective(&ds.problem, &u, &s).stage("reconstruct")?;
            say(out, &format!("reconstructed s_{name}: J {j:.6e}\n"))
        }
        Command::Evaluate { dir } => {
            let (dir, ds) = load(&dir)?;
            let a: Artifacts = pipeline::load_artifacts(&ds, &dir)?;
            let rows = pipeline::evaluate(&ds, &a)?;
            let csv_rows = pipeline::write_report(&dir, &ds.config.name, &rows)?;
            say(out, &format_table(&csv_rows, &[]))
        }
        Command::Pipeline { experiment, baseline } => {
            let (mut cfg, dir) = experiment.resolve()?;
            if baseline == Some(Baseline::Rigid) {
                cfg.correct.rigid_baseline = true;
            }
            let o = pipeline::run_pipeline(&cfg, &dir)?;
            say(out, &format_table(&o.rows, std::slice::from_ref(&o.timing)))?;
            if !o.rigid_unconverged.is_empty() {
                say(out, &format!("warning: rigid refinement did not converge for excitations {:?}\n", o.rigid_unconverged))?;
            }
            say(out, &format!("wrote {}\n", dir.display()))
        }
        Command::Report { dirs, out: dest } => {
            let dirs: Vec<PathBuf> = dirs.iter().map(|d| resolve_output(d)).collect();
            let m = report::merge(&dirs)?;
            if let Some(d) = dest {
                m.write_csv(&d)?;
            }
            say(out, &m.table())
        }
        Command::Gradcheck { experiment, pixels, step, tol } => {
            let (cfg, _) = experiment.resolve()?;
            if !(step > 0.0 && step < 0.1) || pixels == 0 {
                return Err(CliError::Config("gradcheck needs 0 < step < 0.1 and at least one pixel".into()));
            }
            let ds = simulate(&cfg)?;
            let mut rng = Rng::new(cfg.seed).substream(stream::PERTURBATION);
            let r = pipeline::gradient_check(&ds.problem, &ds.u_ref, &ds.truth, pixels, step, &mut rng)?;
            say(out, &format!("gradcheck: {} pixels, max relative error {:.3e} (tolerance {tol:e})\n", r.checked, r.max_rel_err))?;
            if r.checked < pixels {
                return Err(CliError::Check(format!("only {} of {pixels} pixels had a nonzero gradient", r.checked)));
            }
            if r.max_rel_err > tol {
                return Err(CliError::Check(format!("max relative error {:.3e} exceeds {tol:e}", r.max_rel_err)));
            }
            Ok(())
        }
    }
}
