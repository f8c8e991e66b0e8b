//! Reconstruction and dose-volume metrics.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::volume::Volume3D;

pub const DEFAULT_SSIM_WINDOW: usize = 11;
pub const DEFAULT_K1: f64 = 0.01;
pub const DEFAULT_K2: f64 = 0.03;

/// Intensity convention of a CT collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HuConvention {
    /// 12-bit values in `[0, 4095]`; clipped to `[0, 2500]` for training.
    Lidc,
    /// Values in `[-1024, 3071]`; clipped to `[-1000, 1000]` for training.
    Thoracic,
}

impl HuConvention {
    pub fn name(self) -> &'static str {
        match self {
            HuConvention::Lidc => "lidc",
            HuConvention::Thoracic => "thoracic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lidc" => Ok(HuConvention::Lidc),
            "thoracic" => Ok(HuConvention::Thoracic),
            _ => Err(invalid(format!("unknown HU convention {s:?}"))),
        }
    }

    /// Evaluation value range.
    pub fn eval_range(self) -> (f64, f64) {
        match self {
            HuConvention::Lidc => (0.0, 4095.0),
            HuConvention::Thoracic => (-1024.0, 3071.0),
        }
    }

    /// Clip window applied before normalization.
    pub fn clip_window(self) -> (f64, f64) {
        match self {
            HuConvention::Lidc => (0.0, 2500.0),
            HuConvention::Thoracic => (-1000.0, 1000.0),
        }
    }

    /// `I_max` for PSNR and the SSIM dynamic range.
    pub fn dynamic_range(self) -> f64 {
        let (lo, hi) = self.eval_range();
        hi - lo
    }
}

fn check_same(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("volumes {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(i_max² / MSE)`; identical inputs give `+inf`.
pub fn psnr(a: &Volume3D, b: &Volume3D, i_max: f64) -> Result<f64> {
    if !(i_max.is_finite() && i_max > 0.0) {
        return Err(invalid(format!("i_max must be positive, got {i_max}")));
    }
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, i_max))
}

pub fn psnr_from_mse(mse: f64, i_max: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (i_max * i_max / mse).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl SsimParams {
    pub fn new(dynamic_range: f64) -> Self {
        SsimParams {
            window: DEFAULT_SSIM_WINDOW,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            dynamic_range,
        }
    }
}

/// SSIM of a single window from its sums.
///
/// Statistics are population moments over the `n` window voxels.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn ssim_from_sums(sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64, n: f64, c1: f64, c2: f64) -> f64 {
    let (ma, mb) = (sa / n, sb / n);
    let va = saa / n - ma * ma;
    let vb = sbb / n - mb * mb;
    let cov = sab / n - ma * mb;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Box sum of width `win` along one axis of a `(d, h, w)` field.
fn box_sum(src: &[f64], dims: [usize; 3], axis: usize, win: usize) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - win;
    let [od, oh, ow] = out_dims;
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let out = (0..od * oh * ow)
        .into_par_iter()
        .map(|p| {
            let (i, j, k) = (p / (oh * ow), (p / ow) % oh, p % ow);
            let base = (i * dims[1] + j) * dims[2] + k;
            (0..win).map(|t| src[base + t * stride]).sum()
        })
        .collect();
    (out, out_dims)
}

fn window_sums(field: &[f64], dims: [usize; 3], win: usize) -> Vec<f64> {
    let (s, d) = box_sum(field, dims, 2, win);
    let (s, d) = box_sum(&s, d, 1, win);
    box_sum(&s, d, 0, win).0
}

/// Mean SSIM over every fully contained cubic window.
pub fn ssim3d(a: &Volume3D, b: &Volume3D, p: &SsimParams) -> Result<f64> {
    check_same(a, b)?;
    if p.window == 0 {
        return Err(invalid("SSIM window must be >= 1"));
    }
    if !(p.dynamic_range.is_finite() && p.dynamic_range > 0.0) {
        return Err(invalid("SSIM dynamic range must be positive"));
    }
    let dims = a.dims();
    if dims.iter().any(|&d| d < p.window) {
        return Err(Error::Shape(format!(
            "volume {dims:?} is smaller than the {}^3 SSIM window",
            p.window
        )));
    }
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| f(*u, *v)).collect() };
    let sa = window_sums(x, dims, p.window);
    let sb = window_sums(y, dims, p.window);
    let saa = window_sums(&prod(&|u, _| u * u), dims, p.window);
    let sbb = window_sums(&prod(&|_, v| v * v), dims, p.window);
    let sab = window_sums(&prod(&|u, v| u * v), dims, p.window);
    let n = (p.window * p.window * p.window) as f64;
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let total: f64 = (0..sa.len())
        .into_par_iter()
        .map(|q| ssim_from_sums(sa[q], sb[q], saa[q], sbb[q], sab[q], n, c1, c2))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / sa.len() as f64)
}

fn masked_fraction(dose: &Volume3D, mask: &Volume3D, threshold: f64) -> Result<f64> {
    check_same(dose, mask)?;
    if !threshold.is_finite() {
        return Err(invalid("dose threshold must be finite"));
    }
    let mut inside = 0usize;
    let mut hit = 0usize;
    for (d, m) in dose.data().iter().zip(mask.data()) {
        if *m != 0.0 && *m != 1.0 {
            return Err(invalid(format!("mask values must be 0 or 1, found {m}")));
        }
        if *m == 1.0 {
            inside += 1;
            if *d >= threshold {
                hit += 1;
            }
        }
    }
    if inside == 0 {
        return Err(Error::Empty("voxel in structure mask"));
    }
    Ok(100.0 * hit as f64 / inside as f64)
}

/// Percent of the structure receiving at least `pct`% of the prescription.
pub fn dvh_v_percent(dose: &Volume3D, mask: &Volume3D, prescription: f64, pct: f64) -> Result<f64> {
    if !(prescription.is_finite() && prescription > 0.0) {
        return Err(invalid(format!("prescription must be positive, got {prescription}")));
    }
    masked_fraction(dose, mask, pct / 100.0 * prescription)
}

/// Percent of the structure receiving at least `threshold` Gy.
pub fn dvh_v_gray(dose: &Volume3D, mask: &Volume3D, threshold: f64) -> Result<f64> {
    masked_fraction(dose, mask, threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DvhEntry {
    pub structure: String,
    /// V90% of the prescription, in percent.
    pub v90: f64,
    /// V20Gy, in percent.
    pub v20gy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DvhReport {
    pub entries: Vec<DvhEntry>,
}

impl DvhReport {
    pub fn new(entries: Vec<DvhEntry>) -> Result<Self> {
        for e in &entries {
            for v in [e.v90, e.v20gy] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(invalid(format!("{}: percentage {v} outside [0, 100]", e.structure)));
                }
            }
        }
        Ok(DvhReport { entries })
    }

    /// Evaluates V90% and V20Gy for each named mask.
    pub fn compute(dose: &Volume3D, prescription: f64, masks: &[(&str, &Volume3D)]) -> Result<Self> {
        let entries = masks
            .iter()
            .map(|(name, m)| {
                Ok(DvhEntry {
                    structure: name.to_string(),
                    v90: dvh_v_percent(dose, m, prescription, 90.0)?,
                    v20gy: dvh_v_gray(dose, m, 20.0)?,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(entries)
    }
}

/// Per-structure absolute differences `|gt − recon|`.
pub fn dvh_error(gt: &DvhReport, recon: &DvhReport) -> Result<DvhReport> {
    if gt.entries.len() != recon.entries.len() {
        return Err(Error::StructureMismatch(format!(
            "{} structures vs {}",
            gt.entries.len(),
            recon.entries.len()
        )));
    }
    let entries = gt
        .entries
        .iter()
        .zip(&recon.entries)
        .map(|(a, b)| {
            if a.structure != b.structure {
                return Err(Error::StructureMismatch(format!("{} vs {}", a.structure, b.structure)));
            }
            Ok(DvhEntry {
                structure: a.structure.clone(),
                v90: (a.v90 - b.v90).abs(),
                v20gy: (a.v20gy - b.v20gy).abs(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DvhReport { entries })
}

/// One CSV report row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub structure: Option<String>,
    pub value: f64,
    pub band: Option<(f64, f64)>,
}

impl MetricRow {
    pub fn new(metric: &str, value: f64) -> Self {
        MetricRow {
            metric: metric.to_string(),
            structure: None,
            value,
            band: None,
        }
    }

    pub fn for_structure(mut self, structure: &str) -> Self {
        self.structure = Some(structure.to_string());
        self
    }

    pub fn with_band(mut self, lo: f64, hi: f64) -> Self {
        self.band = Some((lo, hi));
        self
    }
}

pub const CSV_HEADER: &str = "metric,structure,value,band";

/// Formats a value for CSV; infinities print as `inf`/`-inf`.
pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{CSV_HEADER}").unwrap();
    for r in rows {
        let band = r
            .band
            .map(|(lo, hi)| format!("{}:{}", format_value(lo), format_value(hi)))
            .unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{}",
            r.metric,
            r.structure.as_deref().unwrap_or("-"),
            format_value(r.value),
            band
        )
        .unwrap();
    }
    s
}
