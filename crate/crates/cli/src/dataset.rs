//! Synthetic datasets: generation, SNFL serialization and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4, Ix3, Ix4};
use serde::{Deserialize, Serialize};

use mocomp::container::{load_array, load_complex2, load_real2, save_array, Tensor};
use mocomp::deform::{synth_sequence, DeformationSequence};
use mocomp::forward::{add_noise, synth_coils, CoilMaps, KSpaceData, MotionProblem};
use mocomp::grid::Image;
use mocomp::phantom::make_phantom;
use mocomp::rng::{stream, Rng};
use mocomp::sampling::radial_trajectory;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result, StageExt};

pub const MANIFEST: &str = "manifest.toml";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Facts about a run recorded next to the resolved config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub version: String,
    pub spokes_per_excitation: usize,
    pub samples_per_excitation: Vec<usize>,
    /// Realized noise energy `‖n‖²` of `y.snfl`.
    pub noise_power: f64,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    #[serde(flatten)]
    config: &'a ExperimentConfig,
    manifest: &'a ManifestInfo,
}

#[derive(Deserialize)]
struct ManifestOnly {
    manifest: ManifestInfo,
}

pub struct Dataset {
    pub config: ExperimentConfig,
    pub truth: Image,
    pub u_ref: DeformationSequence,
    /// Problem holding the noisy measurements.
    pub problem: MotionProblem,
    pub clean: KSpaceData,
}

/// Problem without data, rebuilt deterministically from the config.
pub fn empty_problem(cfg: &ExperimentConfig, coils: CoilMaps) -> Result<MotionProblem> {
    let g = cfg.grid_spec()?;
    let traj = radial_trajectory(cfg.sampling.spokes, g.n(), g).stage("simulate")?;
    MotionProblem::new(traj, cfg.sampling.excitations, coils, cfg.operator()?).stage("simulate")
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let g = cfg.grid_spec()?;
    let rng = Rng::new(cfg.seed);
    let truth = make_phantom(cfg.phantom_kind()?, g);
    let u_ref = synth_sequence(&cfg.sequence_config()?, g, cfg.sampling.excitations, &mut rng.substream(stream::MOTION))
        .stage("simulate")?;
    let coils = synth_coils(cfg.sampling.coils, g, &mut rng.substream(stream::COILS)).stage("simulate")?;
    let p = empty_problem(cfg, coils)?;
    let clean = p.forward(&u_ref, truth.values()).stage("simulate")?;
    let noisy = if cfg.noise.level > 0.0 {
        add_noise(&clean, cfg.noise.level, &mut rng.substream(stream::NOISE)).stage("simulate")?
    } else {
        clean.clone()
    };
    let problem = p.with_data(noisy).stage("simulate")?;
    Ok(Dataset { config: cfg.clone(), truth, u_ref, problem, clean })
}

pub fn sequence_to_tensor(u: &DeformationSequence) -> Tensor {
    Tensor::Real(u.to_array().into_dyn())
}

pub fn save_sequence(path: &Path, u: &DeformationSequence) -> Result<()> {
    save_array(path, &sequence_to_tensor(u)).map_err(|e| CliError::io(path, e))
}

pub fn load_sequence(path: &Path) -> Result<DeformationSequence> {
    let a = load_array(path).and_then(|t| t.into_real()).map_err(|e| CliError::io(path, e))?;
    let a: Array4<f64> = a.into_dimensionality::<Ix4>().map_err(|e| CliError::io(path, e))?;
    DeformationSequence::from_array(&a).map_err(|e| CliError::io(path, e))
}

pub fn save_image(path: &Path, s: &Image) -> Result<()> {
    save_array(path, &Tensor::from(s.values().clone())).map_err(|e| CliError::io(path, e))
}

pub fn load_image(path: &Path) -> Result<Image> {
    let a = load_real2(path).map_err(|e| CliError::io(path, e))?;
    Image::new(a).map_err(|e| CliError::io(path, e))
}

fn save_data(path: &Path, y: &KSpaceData) -> Result<()> {
    let a = y.to_concatenated().map_err(|e| CliError::io(path, e))?;
    save_array(path, &Tensor::from(a)).map_err(|e| CliError::io(path, e))
}

fn load_data(path: &Path, lengths: &[usize]) -> Result<KSpaceData> {
    let a = load_complex2(path).map_err(|e| CliError::io(path, e))?;
    KSpaceData::from_concatenated(&a, lengths).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_manifest(dir: &Path, cfg: &ExperimentConfig, info: &ManifestInfo) -> Result<()> {
    let text = toml::to_string(&ManifestFile { config: cfg, manifest: info })
        .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
    write(&dir.join(MANIFEST), text)
}

pub fn read_manifest(dir: &Path) -> Result<(ExperimentConfig, ManifestInfo)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let info: ManifestOnly = toml::from_str(&text).map_err(|e| CliError::io(&path, e.message()))?;
    let cfg = ExperimentConfig::from_toml_over(&text, &ExperimentConfig::default())?;
    Ok((cfg, info.manifest))
}

impl Dataset {
    pub fn manifest_info(&self, extra_files: &[&str]) -> ManifestInfo {
        let mut files: Vec<String> =
            ["s_ref.snfl", "u_ref.snfl", "coils.snfl", "trajectory.snfl", "y_clean.snfl", "y.snfl"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        files.extend(extra_files.iter().map(|s| s.to_string()));
        ManifestInfo {
            version: VERSION.into(),
            spokes_per_excitation: self.config.sampling.spokes / self.config.sampling.excitations,
            samples_per_excitation: self.problem.block_lengths(),
            noise_power: self.problem.data().noise_power,
            files,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        save_image(&dir.join("s_ref.snfl"), &self.truth)?;
        save_sequence(&dir.join("u_ref.snfl"), &self.u_ref)?;
        let coils = self.problem.coils();
        let g = coils.grid();
        let mut stacked = Array3::zeros((coils.len(), g.n(), g.n()));
        for (c, m) in coils.maps().iter().enumerate() {
            stacked.index_axis_mut(ndarray::Axis(0), c).assign(m);
        }
        let path = dir.join("coils.snfl");
        save_array(&path, &Tensor::Real(stacked.into_dyn())).map_err(|e| CliError::io(&path, e))?;
        let path = dir.join("trajectory.snfl");
        save_array(&path, &Tensor::Real(self.problem.trajectory().to_array().into_dyn()))
            .map_err(|e| CliError::io(&path, e))?;
        save_data(&dir.join("y_clean.snfl"), &self.clean)?;
        save_data(&dir.join("y.snfl"), self.problem.data())?;
        write_manifest(dir, &self.config, &self.manifest_info(&[]))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let (config, info) = read_manifest(dir)?;
        let truth = load_image(&dir.join("s_ref.snfl"))?;
        let u_ref = load_sequence(&dir.join("u_ref.snfl"))?;
        let path = dir.join("coils.snfl");
        let stacked = load_array(&path)
            .and_then(|t| t.into_real())
            .map_err(|e| CliError::io(&path, e))?
            .into_dimensionality::<Ix3>()
            .map_err(|e| CliError::io(&path, e))?;
        let maps: Vec<Array2<f64>> = stacked.outer_iter().map(|m| m.to_owned()).collect();
        let coils = CoilMaps::from_maps(maps).map_err(|e| CliError::io(&path, e))?;
        let p = empty_problem(&config, coils)?;
        let lengths = p.block_lengths();
        if lengths != info.samples_per_excitation {
            return Err(CliError::io(dir, "stored sample counts do not match the configured trajectory"));
        }
        let clean = load_data(&dir.join("y_clean.snfl"), &lengths)?;
        let mut y = load_data(&dir.join("y.snfl"), &lengths)?;
        y.noise_level = config.noise.level;
        y.noise_power = info.noise_power;
        let problem = p.with_data(y).map_err(|e| CliError::io(dir, e))?;
        if truth.grid() != problem.grid() || u_ref.len() != problem.n_exc() {
            return Err(CliError::io(dir, "dataset arrays do not match the manifest"));
        }
        Ok(Dataset { config, truth, u_ref, problem, clean })
    }

    /// Support of the reference image used for deformation errors.
    pub fn support(&self) -> Array2<bool> {
        self.truth.support(0.05 * self.truth.max())
    }
}

pub fn dataset_dir(dir: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    dir.map(|d| crate::config::resolve_output(&d)).unwrap_or_else(|| cfg.output_dir())
}
