//! TOML pipeline configuration.
//!
//! Every block has defaults, so an empty file is a valid configuration.
//! [`PipelineConfig::validate`] checks every downstream precondition before
//! any command does work.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sparsect_core::diffusion::{
    linear_schedule, AnalyticGaussianDenoiser, ConditionalGaussianDenoiser, Denoiser, NoiseSchedule, SamplerConfig,
    SamplerKind, SolverOrder, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_DROPOUT, DEFAULT_FAST_STEPS,
    DEFAULT_GUIDANCE, DEFAULT_STEPS,
};
use sparsect_core::fusion::{BandPassExtractor, FeatureExtractor, IdentityExtractor};
use sparsect_core::latent::{Codebook, ToyAutoencoder, COMPRESSION};
use sparsect_core::metrics::HuConvention;
use sparsect_core::projector::{
    Beam, ProjectionGeometry, DEFAULT_ANGLES, DEFAULT_DETECTOR_SPACING, DEFAULT_DSD, DEFAULT_DSO,
};
use sparsect_core::uncertainty::DEFAULT_MC_SAMPLES;
use sparsect_core::volume::GridSpec;

use crate::error::{CliError, Context, Result};

/// Environment variable naming the output root.
pub const OUTPUT_ENV: &str = "SPARSECT_OUT";

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub beam: String,
    pub dso: f64,
    pub dsd: f64,
    /// `[rows, cols]`.
    pub detector: [usize; 2],
    pub detector_spacing: f64,
    pub angles: Vec<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            beam: "parallel".into(),
            dso: DEFAULT_DSO,
            dsd: DEFAULT_DSD,
            detector: [128, 128],
            detector_spacing: DEFAULT_DETECTOR_SPACING,
            angles: DEFAULT_ANGLES.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// `fast` or `ancestral`.
    pub sampler: String,
    pub fast_steps: usize,
    /// 1 or 2.
    pub solver_order: u8,
    pub guidance: f64,
    pub dropout: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            sampler: "fast".into(),
            fast_steps: DEFAULT_FAST_STEPS,
            solver_order: 2,
            guidance: DEFAULT_GUIDANCE,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub codebook: Option<PathBuf>,
    pub compression: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            codebook: None,
            compression: COMPRESSION,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Explicit Monte Carlo seeds; overrides `seed` and `mc_samples` when set.
    pub seeds: Option<Vec<u64>>,
    pub mc_samples: usize,
    pub output_dir: PathBuf,
    /// `lidc` or `thoracic`.
    pub hu_convention: String,
    /// Edge of the reconstructed cube in voxels.
    pub volume_size: usize,
    pub voxel_spacing: f64,
    pub prescription_gy: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            seeds: None,
            mc_samples: DEFAULT_MC_SAMPLES,
            output_dir: PathBuf::from("out"),
            hu_convention: "lidc".into(),
            volume_size: 128,
            voxel_spacing: 1.0,
            prescription_gy: 50.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionConfig {
    /// `identity` or `bandpass`.
    pub extractor: String,
    /// Scale the fused condition so its largest magnitude is 1.
    pub normalize: bool,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        ConditionConfig {
            extractor: "identity".into(),
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// `conditional` or `analytic`.
    pub kind: String,
    pub data_mean: f64,
    pub data_var: f64,
    pub prior_level: f64,
    pub condition_scale: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            kind: "conditional".into(),
            data_mean: 0.5,
            data_var: 1e-3,
            prior_level: 0.5,
            condition_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub geometry: GeometryConfig,
    pub schedule: ScheduleConfig,
    pub latent: LatentConfig,
    pub run: RunConfig,
    pub condition: ConditionConfig,
    pub denoiser: DenoiserConfig,
}

/// Command-line values that replace config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sampler: Option<String>,
    pub fast_steps: Option<usize>,
    pub guidance: Option<f64>,
    pub mc_samples: Option<usize>,
    pub volume_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub denoiser: Option<String>,
    pub output_dir: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(bad(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if let Some(p) = cfg.latent.codebook.take() {
            cfg.latent.codebook = Some(if p.is_relative() { base_dir.join(p) } else { p });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Applies flag overrides, then the output-root rule: flag, then
    /// `env_output`, then the config value.
    pub fn apply(&mut self, o: &Overrides, env_output: Option<PathBuf>) -> Result<()> {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(s) = &o.sampler {
            self.schedule.sampler = s.clone();
        }
        if let Some(n) = o.fast_steps {
            self.schedule.fast_steps = n;
        }
        if let Some(w) = o.guidance {
            self.schedule.guidance = w;
        }
        if let Some(n) = o.mc_samples {
            self.run.mc_samples = n;
            self.run.seeds = None;
        }
        if let Some(n) = o.volume_size {
            self.run.volume_size = n;
        }
        if let Some(seeds) = &o.seeds {
            self.run.seeds = Some(seeds.clone());
        }
        if let Some(k) = &o.denoiser {
            self.denoiser.kind = k.clone();
        }
        if let Some(dir) = o.output_dir.clone().or(env_output) {
            self.run.output_dir = dir;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.angles.is_empty() {
            return Err(bad("geometry.angles must list at least one angle"));
        }
        if g.angles.iter().any(|a| !a.is_finite()) {
            return Err(bad("geometry.angles must be finite"));
        }
        self.base_geometry()?;

        let s = &self.schedule;
        if s.steps == 0 {
            return Err(bad("schedule.steps must be >= 1"));
        }
        linear_schedule(s.steps, s.beta_start, s.beta_end).context("schedule")?;
        match s.sampler.as_str() {
            "fast" | "ancestral" => {}
            other => return Err(bad(format!("schedule.sampler must be fast or ancestral, got {other}"))),
        }
        if s.fast_steps == 0 || s.fast_steps > s.steps {
            return Err(bad(format!(
                "schedule.fast_steps must be in 1..={}, got {}",
                s.steps, s.fast_steps
            )));
        }
        if !matches!(s.solver_order, 1 | 2) {
            return Err(bad(format!("schedule.solver_order must be 1 or 2, got {}", s.solver_order)));
        }
        if !(s.guidance.is_finite() && s.guidance >= 0.0) {
            return Err(bad(format!("schedule.guidance must be >= 0, got {}", s.guidance)));
        }
        if !(0.0..=1.0).contains(&s.dropout) {
            return Err(bad(format!("schedule.dropout must be in [0, 1], got {}", s.dropout)));
        }

        if self.latent.compression != COMPRESSION {
            return Err(bad(format!(
                "latent.compression must be {COMPRESSION}, got {}",
                self.latent.compression
            )));
        }
        if let Some(p) = &self.latent.codebook {
            if !p.is_file() {
                return Err(bad(format!("latent.codebook {} does not exist", p.display())));
            }
        }

        let r = &self.run;
        if r.mc_samples < 2 {
            return Err(bad(format!("run.mc_samples must be >= 2, got {}", r.mc_samples)));
        }
        if let Some(seeds) = &r.seeds {
            if seeds.len() < 2 {
                return Err(bad("run.seeds must list at least two seeds"));
            }
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(bad("run.seeds must be distinct"));
            }
        }
        HuConvention::parse(&r.hu_convention).context("run.hu_convention")?;
        if r.volume_size == 0 || !r.volume_size.is_multiple_of(COMPRESSION) {
            return Err(bad(format!(
                "run.volume_size must be a positive multiple of {COMPRESSION}, got {}",
                r.volume_size
            )));
        }
        positive("run.voxel_spacing", r.voxel_spacing)?;
        positive("run.prescription_gy", r.prescription_gy)?;
        if r.output_dir.as_os_str().is_empty() {
            return Err(bad("run.output_dir must not be empty"));
        }

        match self.condition.extractor.as_str() {
            "identity" | "bandpass" => {}
            other => return Err(bad(format!("condition.extractor must be identity or bandpass, got {other}"))),
        }

        let d = &self.denoiser;
        match d.kind.as_str() {
            "conditional" | "analytic" => {}
            other => return Err(bad(format!("denoiser.kind must be conditional or analytic, got {other}"))),
        }
        positive("denoiser.data_var", d.data_var)?;
        for (name, v) in [
            ("denoiser.data_mean", d.data_mean),
            ("denoiser.prior_level", d.prior_level),
            ("denoiser.condition_scale", d.condition_scale),
        ] {
            if !v.is_finite() {
                return Err(bad(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Geometry at angle 0; views use [`ProjectionGeometry::with_angle`].
    pub fn base_geometry(&self) -> Result<ProjectionGeometry> {
        let g = &self.geometry;
        let [rows, cols] = g.detector;
        let mut geo = match Beam::parse(&g.beam).context("geometry.beam")? {
            Beam::Parallel => ProjectionGeometry::parallel(rows, cols),
            Beam::Cone => ProjectionGeometry::cone(rows, cols, g.dso, g.dsd),
        };
        geo.dso = g.dso;
        geo.dsd = g.dsd;
        geo.detector_spacing = g.detector_spacing;
        geo.validate().context("geometry")?;
        Ok(geo)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        linear_schedule(s.steps, s.beta_start, s.beta_end).context("schedule")
    }

    pub fn sampler(&self) -> SamplerConfig {
        let s = &self.schedule;
        let kind = match s.sampler.as_str() {
            "ancestral" => SamplerKind::Ancestral,
            _ => SamplerKind::Fast {
                steps: s.fast_steps,
                order: if s.solver_order == 1 {
                    SolverOrder::First
                } else {
                    SolverOrder::Second
                },
            },
        };
        SamplerConfig {
            kind,
            guidance: s.guidance,
        }
    }

    /// Monte Carlo seeds: the explicit list if given, else `seed ^ n`.
    pub fn mc_seeds(&self) -> Vec<u64> {
        match &self.run.seeds {
            Some(s) => s.clone(),
            None => sparsect_core::uncertainty::mc_seeds(self.run.seed, self.run.mc_samples),
        }
    }

    pub fn convention(&self) -> HuConvention {
        HuConvention::parse(&self.run.hu_convention).expect("validated")
    }

    /// Centered cube the reconstruction is decoded onto.
    pub fn target_grid(&self) -> Result<GridSpec> {
        GridSpec::cube(self.run.volume_size, self.run.voxel_spacing).context("run.volume_size")
    }

    pub fn extractor(&self) -> Box<dyn FeatureExtractor> {
        match self.condition.extractor.as_str() {
            "bandpass" => Box::new(BandPassExtractor),
            _ => Box::new(IdentityExtractor),
        }
    }

    pub fn autoencoder(&self) -> ToyAutoencoder {
        ToyAutoencoder::default()
    }

    pub fn codebook(&self) -> Result<Option<Codebook>> {
        self.latent
            .codebook
            .as_deref()
            .map(|p| Codebook::read_file(p).context(format!("codebook {}", p.display())))
            .transpose()
    }

    /// The closed-form toy denoiser described by the `[denoiser]` block.
    ///
    /// The conditional variant uses the autoencoder's lift as channel gains,
    /// so a latent at its prior mean decodes to the condition level.
    pub fn denoiser(&self, schedule: &NoiseSchedule) -> Result<Box<dyn Denoiser>> {
        let d = &self.denoiser;
        Ok(match d.kind.as_str() {
            "analytic" => Box::new(
                AnalyticGaussianDenoiser::new(schedule.clone(), d.data_mean, d.data_var).context("denoiser")?,
            ),
            _ => {
                let ae = self.autoencoder();
                Box::new(
                    ConditionalGaussianDenoiser::new(
                        schedule.clone(),
                        d.data_var,
                        ae.lift().to_vec(),
                        d.prior_level,
                        d.condition_scale,
                    )
                    .context("denoiser")?,
                )
            }
        })
    }
}
