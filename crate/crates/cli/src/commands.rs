//! Command implementations. Each returns the files it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use sparsect_core::fusion::{build_condition, FeatureVolume, View};
use sparsect_core::image::Image2D;
use sparsect_core::latent::latent_grid_for;
use sparsect_core::metrics::{dvh_error, mse, psnr, ssim3d, to_csv, DvhReport, MetricRow, SsimParams};
use sparsect_core::pipeline::Reconstructor;
use sparsect_core::projector::{render_drr, Sidecar};
use sparsect_core::uncertainty::{mc_sample_seeds, voxel_stats, MapKind};
use sparsect_core::volume::{
    clip_values, denormalize, make_phantom, normalize, read_vol1_file, write_vol1_file, Phantom, Plane, ValueUnit,
    Volume3D,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, Context, Result};

/// `empty` plus every library phantom.
pub fn phantom_kinds() -> Vec<&'static str> {
    let mut kinds = vec!["empty"];
    kinds.extend(Phantom::library_names());
    kinds
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_volume(path: &Path, v: &Volume3D) -> Result<()> {
    create_parent(path)?;
    write_vol1_file(path, v).context(format!("writing {}", path.display()))
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    if !path.is_file() {
        return Err(CliError::Validation(format!("{} does not exist", path.display())));
    }
    read_vol1_file(path).context(format!("reading {}", path.display()))
}

fn write_pgm(path: &Path, img: &Image2D) -> Result<f64> {
    let mut buf = Vec::new();
    let scale = img.write_pgm(&mut buf).context("encoding PGM")?;
    write_bytes(path, &buf)?;
    Ok(scale)
}

/// Writes a library phantom (or an empty volume) of `n³` voxels.
///
/// Phantom intensities in `[0, 1]` map linearly onto the convention's clip
/// window, so an empty phantom under `lidc` is all zeros.
pub fn cmd_phantom(cfg: &PipelineConfig, kind: &str, n: usize, out: &Path) -> Result<PathBuf> {
    let spacing = cfg.run.voxel_spacing;
    let phantom = match kind {
        "empty" => Phantom::default(),
        name => {
            if !Phantom::library_names().contains(&name) {
                return Err(CliError::Validation(format!(
                    "unknown phantom kind {name:?}; expected one of {}",
                    phantom_kinds().join(", ")
                )));
            }
            Phantom::library(name, n as f64 * spacing / 2.0).context("phantom")?
        }
    };
    let raw = make_phantom(&phantom, n, spacing).context("phantom")?;
    let (lo, hi) = cfg.convention().clip_window();
    let v = raw.map(|x| lo + x * (hi - lo)).context("phantom")?;
    write_volume(out, &v)?;
    Ok(out.to_path_buf())
}

/// Attenuation field seen by the projector.
///
/// HU volumes are clipped to the convention's window and mapped to `[0, 1]`;
/// normalized volumes are used as they are.
pub fn attenuation(cfg: &PipelineConfig, v: &Volume3D) -> Result<Volume3D> {
    match v.unit() {
        ValueUnit::Normalized => Ok(v.clone()),
        ValueUnit::Hu => {
            let (lo, hi) = cfg.convention().clip_window();
            normalize(&clip_values(v, lo, hi).context("clip")?, lo, hi).context("normalize")
        }
    }
}

/// Renders one DRR per configured angle as `view_NN.pgm` plus a `view_NN.txt`
/// geometry sidecar.
pub fn cmd_drr(cfg: &PipelineConfig, volume: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let v = attenuation(cfg, &read_volume(volume)?)?;
    let base = cfg.base_geometry()?;
    let mut written = Vec::new();
    for (k, &angle) in cfg.geometry.angles.iter().enumerate() {
        let geometry = base.with_angle(angle);
        let img = render_drr(&v, &geometry).context(format!("DRR at {angle} deg"))?;
        let pgm = out_dir.join(format!("view_{k:02}.pgm"));
        let value_per_count = write_pgm(&pgm, &img)?;
        let sidecar = Sidecar {
            geometry,
            value_per_count,
            image_max: img.max(),
        };
        write_bytes(&pgm.with_extension("txt"), sidecar.to_text().as_bytes())?;
        written.push(pgm);
    }
    Ok(written)
}

/// Expands directories to their sorted `*.pgm` files.
pub fn expand_views(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "pgm"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("no x-ray views given".into()));
    }
    Ok(out)
}

/// Loads PGM views with their sidecars.
pub fn load_views(inputs: &[PathBuf]) -> Result<Vec<View>> {
    expand_views(inputs)?
        .iter()
        .map(|pgm| {
            let side_path = pgm.with_extension("txt");
            if !pgm.is_file() || !side_path.is_file() {
                return Err(CliError::Validation(format!(
                    "{} needs an image and a {} sidecar",
                    pgm.display(),
                    side_path.display()
                )));
            }
            let text = fs::read_to_string(&side_path).map_err(|e| CliError::io(&side_path, e))?;
            let side = Sidecar::parse(&text).context(format!("{}", side_path.display()))?;
            side.geometry.validate().context(format!("{}", side_path.display()))?;
            let bytes = fs::read(pgm).map_err(|e| CliError::io(pgm, e))?;
            let image = Image2D::read_pgm(&mut bytes.as_slice(), side.value_per_count, side.geometry.detector_spacing)
                .context(format!("{}", pgm.display()))?;
            if image.shape() != side.geometry.detector_px {
                return Err(CliError::Validation(format!(
                    "{}: image is {:?} but sidecar says {:?}",
                    pgm.display(),
                    image.shape(),
                    side.geometry.detector_px
                )));
            }
            Ok(View {
                image,
                geometry: side.geometry,
            })
        })
        .collect()
}

/// Fused condition on the latent grid of the configured target volume.
pub fn condition_for(cfg: &PipelineConfig, views: &[View]) -> Result<FeatureVolume> {
    let latent = latent_grid_for(&cfg.target_grid()?).context("latent grid")?;
    let cond = build_condition(views, cfg.extractor().as_ref(), &latent).context("condition")?;
    if !cfg.condition.normalize {
        return Ok(cond);
    }
    let peak = cond.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(if peak > 0.0 { cond.scaled(1.0 / peak) } else { cond })
}

pub fn cmd_fuse(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let cond = condition_for(cfg, &load_views(inputs)?)?;
    let mut buf = Vec::new();
    cond.write_volc(&mut buf).context("encoding condition")?;
    write_bytes(out, &buf)?;
    Ok(out.to_path_buf())
}

/// Draws reconstructions in HU for each seed.
fn reconstruct_seeds(cfg: &PipelineConfig, views: &[View], seeds: &[u64]) -> Result<Vec<Volume3D>> {
    let cond = condition_for(cfg, views)?;
    let schedule = cfg.schedule()?;
    let denoiser = cfg.denoiser(&schedule)?;
    let ae = cfg.autoencoder();
    let codebook = cfg.codebook()?;
    let target = cfg.target_grid()?;
    let (lo, hi) = cfg.convention().clip_window();
    let r = Reconstructor {
        denoiser: denoiser.as_ref(),
        autoencoder: &ae,
        schedule: &schedule,
        sampler: cfg.sampler(),
        codebook: codebook.as_ref(),
    };
    mc_sample_seeds(seeds, |seed| denormalize(&r.reconstruct(Some(&cond), &target, seed)?, lo, hi))
        .context("reconstruction")
}

/// Views → condition → sample → decode → HU volume.
pub fn cmd_reconstruct(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    let views = load_views(inputs)?;
    let mut vols = reconstruct_seeds(cfg, &views, &[cfg.run.seed])?;
    write_volume(out, &vols.remove(0))?;
    Ok(out.to_path_buf())
}

/// Monte Carlo maps as `<map>.vol1` files plus `summary.csv`.
///
/// With ground truth, bias, squared bias and MSE maps are added and the
/// per-voxel identity `mse = bias² + variance` is checked during the run.
pub fn cmd_uncertainty(
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    ground_truth: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let seeds = cfg.mc_seeds();
    if seeds.len() < 2 {
        return Err(CliError::Validation("uncertainty needs at least two samples".into()));
    }
    let gt = ground_truth.map(read_volume).transpose()?;
    let views = load_views(inputs)?;
    let samples = reconstruct_seeds(cfg, &views, &seeds)?;
    let maps = voxel_stats(&samples, gt.as_ref()).context("uncertainty maps")?;
    let mut written = Vec::new();
    for kind in MapKind::ALL {
        if let Some(v) = maps.get(kind) {
            let path = out_dir.join(format!("{}.vol1", kind.name()));
            write_volume(&path, v)?;
            written.push(path);
        }
    }
    let csv = out_dir.join("summary.csv");
    write_bytes(&csv, to_csv(&maps.summary_rows()).as_bytes())?;
    written.push(csv);
    Ok(written)
}

/// Dose inputs for the DVH rows of [`cmd_evaluate`].
#[derive(Clone, Debug, Default)]
pub struct DoseInputs {
    pub dose: Option<PathBuf>,
    pub recon_dose: Option<PathBuf>,
    pub masks: Vec<(String, PathBuf)>,
}

/// Metric rows comparing a reconstruction with ground truth.
pub fn evaluate_rows(cfg: &PipelineConfig, recon: &Volume3D, gt: &Volume3D, dose: &DoseInputs) -> Result<Vec<MetricRow>> {
    let range = cfg.convention().dynamic_range();
    let mut rows = vec![
        MetricRow::new("psnr", psnr(recon, gt, range).context("psnr")?),
        MetricRow::new("ssim", ssim3d(recon, gt, &SsimParams::new(range)).context("ssim")?),
        MetricRow::new("mse", mse(recon, gt).context("mse")?),
    ];
    let Some(dose_path) = &dose.dose else {
        if dose.recon_dose.is_some() {
            return Err(CliError::Validation("--recon-dose needs --dose".into()));
        }
        return Ok(rows);
    };
    if dose.masks.is_empty() {
        return Err(CliError::Validation("--dose needs at least one --mask".into()));
    }
    let masks = dose
        .masks
        .iter()
        .map(|(name, p)| Ok((name.as_str(), read_volume(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&str, &Volume3D)> = masks.iter().map(|(n, v)| (*n, v)).collect();
    let rx = cfg.run.prescription_gy;
    let gt_dvh = DvhReport::compute(&read_volume(dose_path)?, rx, &refs).context("DVH")?;
    for e in &gt_dvh.entries {
        rows.push(MetricRow::new("v90", e.v90).for_structure(&e.structure));
        rows.push(MetricRow::new("v20gy", e.v20gy).for_structure(&e.structure));
    }
    if let Some(rd) = &dose.recon_dose {
        let recon_dvh = DvhReport::compute(&read_volume(rd)?, rx, &refs).context("DVH")?;
        let err = dvh_error(&gt_dvh, &recon_dvh).context("DVH error")?;
        for e in &err.entries {
            rows.push(MetricRow::new("v90_error", e.v90).for_structure(&e.structure).with_band(1.0, 9.0));
            rows.push(MetricRow::new("v20gy_error", e.v20gy).for_structure(&e.structure).with_band(1.0, 9.0));
        }
    }
    Ok(rows)
}

pub fn cmd_evaluate(cfg: &PipelineConfig, recon: &Path, gt: &Path, dose: &DoseInputs, out: &Path) -> Result<PathBuf> {
    let rows = evaluate_rows(cfg, &read_volume(recon)?, &read_volume(gt)?, dose)?;
    write_bytes(out, to_csv(&rows).as_bytes())?;
    Ok(out.to_path_buf())
}

/// Centre slices of each volume in all three planes, plus `stats.csv`.
///
/// Slices are shifted by the volume minimum before PGM export so negative HU
/// values stay visible.
pub fn cmd_report(volumes: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if volumes.is_empty() {
        return Err(CliError::Validation("no volumes given".into()));
    }
    let mut rows = Vec::new();
    let mut written = Vec::new();
    for path in volumes {
        let v = read_volume(path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let offset = v.min();
        rows.push(MetricRow::new("min", offset).for_structure(&name));
        rows.push(MetricRow::new("max", v.max()).for_structure(&name));
        rows.push(MetricRow::new("mean", v.mean()).for_structure(&name));
        for plane in [Plane::Axial, Plane::Coronal, Plane::Sagittal] {
            let idx = v.dims()[plane.axis()] / 2;
            let slice = v.slice(plane, idx).context("slice")?;
            let shifted = Image2D::new(
                slice.rows(),
                slice.cols(),
                slice.pixel_spacing(),
                slice.data().iter().map(|x| x - offset).collect(),
            )
            .context("slice")?;
            let pgm = out_dir.join(format!("{name}_{}.pgm", plane.name()));
            let scale = write_pgm(&pgm, &shifted)?;
            rows.push(MetricRow::new(&format!("{}_value_per_count", plane.name()), scale).for_structure(&name));
            written.push(pgm);
        }
    }
    let csv = out_dir.join("stats.csv");
    write_bytes(&csv, to_csv(&rows).as_bytes())?;
    written.push(csv);
    Ok(written)
}
