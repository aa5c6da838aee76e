//! Experiment configuration: TOML files layered over a built-in profile.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use mocomp::correct::{CorrectionConfig, IdentityProjector, Projector, SplineProjector, StepRule};
use mocomp::deform::{MotionClass, SequenceConfig, SplineOrder};
use mocomp::estimate::{EstimateConfig, RefinerConfig};
use mocomp::forward::OperatorPath;
use mocomp::grid::GridSpec;
use mocomp::phantom::PhantomKind;
use mocomp::recon::ReconConfig;

use crate::error::{CliError, Result};

/// Environment variable that replaces the root of relative output paths.
pub const OUTPUT_ROOT_ENV: &str = "MOCOMP_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Run directory; relative paths resolve against the output root.
    pub output: PathBuf,
    pub grid: GridSection,
    pub sampling: SamplingSection,
    pub phantom: PhantomSection,
    pub motion: MotionSection,
    pub noise: NoiseSection,
    pub recon: ReconSection,
    pub estimate: EstimateSection,
    pub correct: CorrectSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub spokes: usize,
    pub excitations: usize,
    pub coils: usize,
    /// `dfft` or `nufft`.
    pub operator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    /// `shepp_logan`, `disks` or `constant`.
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    /// `rigid`, `affine`, `ffd` or `ffd+convex`.
    pub class: String,
    pub max_rotation_deg: f64,
    pub max_shift_frac: f64,
    pub max_shear: f64,
    pub ffd_amplitude: f64,
    pub ffd_nodes: usize,
    /// `linear` or `cubic`.
    pub ffd_order: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Noise standard deviation relative to the RMS sample magnitude.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconSection {
    pub cg_iters: usize,
    /// Final TV weight; 0 skips the TV row.
    pub tv_lambda: f64,
    pub tv_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub iters: usize,
    pub levels: usize,
    pub smoothing: f64,
    pub warps: usize,
    pub sweeps: usize,
    pub lambda: f64,
    pub affine_iters: usize,
    pub temporal_half_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectSection {
    pub levels: u32,
    pub iters: usize,
    pub cg_iters: usize,
    pub backtrack: usize,
    pub expand: usize,
    /// `spline` or `identity`.
    pub projector: String,
    /// Spline control spacing in pixels at full resolution.
    pub spacing: f64,
    /// Also run the rigid Gauss-Newton baseline.
    pub rigid_baseline: bool,
    pub rigid_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// N=64, 8 excitations; fast enough for CI.
    Desk,
    /// N=192, 192 spokes, 16 excitations.
    Paper,
}

impl FromStr for Profile {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(CliError::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let paper = Self {
            name: "paper".into(),
            seed: 42,
            output: PathBuf::from("runs/paper"),
            grid: GridSection { n: 192 },
            sampling: SamplingSection { spokes: 192, excitations: 16, coils: 4, operator: "dfft".into() },
            phantom: PhantomSection { kind: "shepp_logan".into() },
            motion: MotionSection {
                class: "rigid".into(),
                max_rotation_deg: 10.0,
                max_shift_frac: 0.03,
                max_shear: 0.03,
                ffd_amplitude: 2.0,
                ffd_nodes: 5,
                ffd_order: "cubic".into(),
            },
            noise: NoiseSection { level: 0.05 },
            recon: ReconSection { cg_iters: 10, tv_lambda: 0.0, tv_iters: 100 },
            estimate: EstimateSection {
                iters: 2,
                levels: 3,
                smoothing: 1.0,
                warps: 5,
                sweeps: 40,
                lambda: 0.2,
                affine_iters: 10,
                temporal_half_width: 2,
            },
            correct: CorrectSection {
                levels: 2,
                iters: 2,
                cg_iters: 10,
                backtrack: 5,
                expand: 4,
                projector: "spline".into(),
                spacing: 48.0,
                rigid_baseline: false,
                rigid_iters: 30,
            },
        };
        match profile {
            Profile::Paper => paper,
            Profile::Desk => Self {
                name: "desk".into(),
                output: PathBuf::from("runs/desk"),
                grid: GridSection { n: 64 },
                sampling: SamplingSection { spokes: 96, excitations: 8, ..paper.sampling.clone() },
                phantom: PhantomSection { kind: "disks".into() },
                motion: MotionSection { max_rotation_deg: 5.0, max_shift_frac: 0.02, ..paper.motion.clone() },
                correct: CorrectSection { iters: 8, spacing: 16.0, ..paper.correct.clone() },
                ..paper
            },
        }
    }

    /// Parses TOML text layered over `base`: keys present in the text replace
    /// the base values, unknown keys are rejected. A `[manifest]` table, as
    /// written next to every run, is ignored so manifests can be rerun.
    pub fn from_toml_over(text: &str, base: &ExperimentConfig) -> Result<Self> {
        let mut overlay: toml::Table = text.parse().map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
        overlay.remove("manifest");
        let mut merged = toml::Table::try_from(base).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| {
            CliError::Config(e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; a top-level `profile` key selects the base profile.
    pub fn load(path: &Path, default_profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let profile = match table.remove("profile") {
            Some(toml::Value::String(p)) => p.parse()?,
            Some(_) => return Err(CliError::Config("`profile` must be a string".into())),
            None => default_profile,
        };
        Self::from_toml_over(&table.to_string(), &Self::profile(profile))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every value before any computation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return bad(format!("name {:?} must be non-empty without '/', '\\' or ','", self.name));
        }
        self.grid_spec()?;
        let s = &self.sampling;
        if s.excitations == 0 || !s.spokes.is_multiple_of(s.excitations) {
            return bad(format!("{} spokes cannot be split into {} excitations", s.spokes, s.excitations));
        }
        if s.coils == 0 {
            return bad("sampling.coils must be at least 1".into());
        }
        self.operator()?;
        self.phantom_kind()?;
        self.sequence_config()?;
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return bad(format!("noise.level must be nonnegative, got {}", self.noise.level));
        }
        self.recon_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.recon.tv_iters == 0 {
            return bad("recon.tv_iters must be at least 1".into());
        }
        self.estimate_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.correction_config().validate(self.grid.n).map_err(|e| CliError::Config(e.to_string()))?;
        self.projector()?;
        if self.correct.rigid_iters == 0 {
            return bad("correct.rigid_iters must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.n).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn operator(&self) -> Result<OperatorPath> {
        self.sampling.operator.parse().map_err(|e: mocomp::Error| CliError::Config(e.to_string()))
    }

    pub fn phantom_kind(&self) -> Result<PhantomKind> {
        let kind: PhantomKind =
            self.phantom.kind.parse().map_err(|e: mocomp::Error| CliError::Config(e.to_string()))?;
        Ok(match kind {
            PhantomKind::Disks { .. } => PhantomKind::Disks { seed: self.seed },
            k => k,
        })
    }

    pub fn sequence_config(&self) -> Result<SequenceConfig> {
        let m = &self.motion;
        let class: MotionClass = m.class.parse().map_err(|e: mocomp::Error| CliError::Config(e.to_string()))?;
        let ffd_order = match m.ffd_order.as_str() {
            "linear" => SplineOrder::Linear,
            "cubic" => SplineOrder::Cubic,
            other => return Err(CliError::Config(format!("unknown ffd_order {other:?}"))),
        };
        Ok(SequenceConfig {
            class,
            max_rotation_deg: m.max_rotation_deg,
            max_shift_frac: m.max_shift_frac,
            max_shear: m.max_shear,
            ffd_amplitude: m.ffd_amplitude,
            ffd_nodes: m.ffd_nodes,
            ffd_order,
            region: None,
        })
    }

    pub fn recon_config(&self) -> ReconConfig {
        ReconConfig {
            cg_iters: self.recon.cg_iters,
            tv_lambda: self.recon.tv_lambda,
            tv_iters: self.recon.tv_iters,
            ..ReconConfig::default()
        }
    }

    pub fn estimate_config(&self) -> EstimateConfig {
        let e = &self.estimate;
        EstimateConfig {
            iters: e.iters,
            refiner: RefinerConfig {
                levels: e.levels,
                smoothing: e.smoothing,
                warps: e.warps,
                sweeps: e.sweeps,
                lambda: e.lambda,
                affine_iters: e.affine_iters,
            },
            temporal_half_width: e.temporal_half_width,
        }
    }

    pub fn correction_config(&self) -> CorrectionConfig {
        let c = &self.correct;
        CorrectionConfig {
            levels: c.levels,
            iters: c.iters,
            cg_iters: c.cg_iters,
            step: StepRule { backtrack: c.backtrack, expand: c.expand },
        }
    }

    pub fn projector(&self) -> Result<Box<dyn Projector>> {
        match self.correct.projector.as_str() {
            "identity" => Ok(Box::new(IdentityProjector)),
            "spline" if self.correct.spacing > 0.0 && self.correct.spacing.is_finite() => {
                Ok(Box::new(SplineProjector { spacing: self.correct.spacing }))
            }
            "spline" => Err(CliError::Config(format!("correct.spacing must be positive, got {}", self.correct.spacing))),
            other => Err(CliError::Config(format!("unknown projector {other:?} (expected spline or identity)"))),
        }
    }

    /// Run directory after applying the output-root override.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.output)
    }
}

/// Relative paths are placed under `$MOCOMP_OUTPUT_ROOT` when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid() {
        ExperimentConfig::profile(Profile::Desk).validate().unwrap();
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::profile(Profile::Desk);
        let back = ExperimentConfig::from_toml_over(&cfg.to_toml(), &ExperimentConfig::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_overrides_base() {
        let cfg = ExperimentConfig::from_toml_over(
            "seed = 7\n[noise]\nlevel = 0.0\n",
            &ExperimentConfig::profile(Profile::Desk),
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.noise.level, 0.0);
        assert_eq!(cfg.grid.n, 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let base = ExperimentConfig::profile(Profile::Desk);
        assert!(ExperimentConfig::from_toml_over("sed = 7\n", &base).is_err());
        assert!(ExperimentConfig::from_toml_over("[grid]\nN = 64\n", &base).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let base = ExperimentConfig::profile(Profile::Desk);
        for text in [
            "[grid]\nn = 63\n",
            "[sampling]\noperator = \"fft\"\n",
            "[noise]\nlevel = -1.0\n",
            "[correct]\nlevels = 4\n",
            "[motion]\nclass = \"wobble\"\n",
            "[phantom]\nkind = \"cat\"\n",
        ] {
            let err = ExperimentConfig::from_toml_over(text, &base).unwrap_err();
            assert_eq!(err.code(), 2, "{text}");
        }
    }

    #[test]
    fn manifest_table_is_ignored() {
        let base = ExperimentConfig::profile(Profile::Desk);
        let text = format!("{}\n[manifest]\nversion = \"0.1.0\"\n", base.to_toml());
        assert_eq!(ExperimentConfig::from_toml_over(&text, &base).unwrap(), base);
    }
}
