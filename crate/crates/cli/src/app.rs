//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands::{
    cmd_drr, cmd_evaluate, cmd_fuse, cmd_phantom, cmd_reconstruct, cmd_report, cmd_uncertainty, DoseInputs,
};
use crate::config::{Overrides, PipelineConfig, OUTPUT_ENV};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sparsect", version, about = "Sparse-view CT reconstruction workbench")]
pub struct Cli {
    /// TOML pipeline configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Output root; overrides the environment variable and `run.output_dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// `fast` or `ancestral`.
    #[arg(long, global = true)]
    pub sampler: Option<String>,

    /// Fast-sampler step count.
    #[arg(long, global = true)]
    pub steps: Option<usize>,

    #[arg(long, global = true)]
    pub guidance: Option<f64>,

    /// `conditional` or `analytic`.
    #[arg(long, global = true)]
    pub denoiser: Option<String>,

    /// Edge of the reconstructed cube in voxels.
    #[arg(long, global = true)]
    pub size: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a phantom volume.
    Phantom {
        /// `empty`, `shepp3d`, `lung` or `smooth`.
        #[arg(long)]
        kind: String,
        /// Voxels per edge; defaults to `run.volume_size`.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one DRR per configured angle.
    Drr {
        volume: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the fused condition volume from x-ray views.
    Fuse {
        #[arg(required = true)]
        views: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample one reconstruction from x-ray views.
    Reconstruct {
        #[arg(required = true)]
        views: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo uncertainty maps.
    Uncertainty {
        #[arg(required = true)]
        views: Vec<PathBuf>,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Explicit comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Ground-truth volume for bias and MSE maps.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR, SSIM and optional DVH rows as CSV.
    Evaluate {
        recon: PathBuf,
        gt: PathBuf,
        /// Reference dose volume.
        #[arg(long)]
        dose: Option<PathBuf>,
        /// Dose computed on the reconstruction.
        #[arg(long)]
        recon_dose: Option<PathBuf>,
        /// Structure mask as `name=path`; repeatable.
        #[arg(long = "mask", value_parser = parse_mask)]
        masks: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Centre-slice images and summary statistics.
    Report {
        #[arg(required = true)]
        volumes: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mask(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let (mc_samples, seeds) = match &self.command {
            Command::Uncertainty { n, seeds, .. } => (*n, seeds.clone()),
            _ => (None, None),
        };
        Overrides {
            seed: self.seed,
            sampler: self.sampler.clone(),
            fast_steps: self.steps,
            guidance: self.guidance,
            mc_samples,
            volume_size: self.size,
            seeds,
            denoiser: self.denoiser.clone(),
            output_dir: self.out_dir.clone(),
        }
    }
}

/// Loads the config and applies flags and the output-root variable.
pub fn resolve_config(cli: &Cli, env_output: Option<PathBuf>) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::default(),
    };
    cfg.apply(&cli.overrides(), env_output)?;
    Ok(cfg)
}

fn or_default(out: &Option<PathBuf>, root: &Path, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| root.join(name))
}

/// Runs a parsed command, returning the files written.
pub fn execute(cli: &Cli, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let root = cfg.run.output_dir.as_path();
    match &cli.command {
        Command::Phantom { kind, n, out } => {
            let n = n.unwrap_or(cfg.run.volume_size);
            if n == 0 {
                return Err(CliError::Validation("phantom size must be >= 1".into()));
            }
            let out = or_default(out, root, &format!("phantom_{kind}_{n}.vol1"));
            Ok(vec![cmd_phantom(cfg, kind, n, &out)?])
        }
        Command::Drr { volume, out } => cmd_drr(cfg, volume, &or_default(out, root, "drr")),
        Command::Fuse { views, out } => Ok(vec![cmd_fuse(cfg, views, &or_default(out, root, "condition.volc"))?]),
        Command::Reconstruct { views, out } => {
            let out = or_default(out, root, &format!("recon_seed{}.vol1", cfg.run.seed));
            Ok(vec![cmd_reconstruct(cfg, views, &out)?])
        }
        Command::Uncertainty { views, gt, out, .. } => {
            cmd_uncertainty(cfg, views, gt.as_deref(), &or_default(out, root, "uncertainty"))
        }
        Command::Evaluate {
            recon,
            gt,
            dose,
            recon_dose,
            masks,
            out,
        } => {
            let dose = DoseInputs {
                dose: dose.clone(),
                recon_dose: recon_dose.clone(),
                masks: masks.clone(),
            };
            Ok(vec![cmd_evaluate(cfg, recon, gt, &dose, &or_default(out, root, "evaluate.csv"))?])
        }
        Command::Report { volumes, out } => cmd_report(volumes, &or_default(out, root, "report")),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
///
/// Messages go to stdout (written paths) and stderr (errors).
pub fn run<I, T>(args: I, env_output: Option<PathBuf>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match resolve_config(&cli, env_output).and_then(|cfg| execute(&cli, &cfg)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Output root from the environment, if set and non-empty.
pub fn env_output() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}
