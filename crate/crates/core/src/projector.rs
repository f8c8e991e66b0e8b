//! X-ray acquisition geometry and DRR rendering.
//!
//! A world point `p = (x, y, z)` maps into the detector frame as
//! `p' = p·R(θ) + t`, where `R(θ)` is the right-handed rotation about the
//! axial `z` axis applied to row vectors. In that frame rays travel along
//! `+x'`: at 0° they cross the patient laterally, at 90° front to back.
//! The detector lies in the `y'z'` plane with `z'` along rows and `y'`
//! along columns; pixel `(0, 0)` sits at the most negative `(z', y')` corner.
//!
//! Cone beams place the source at `x' = -dso` and the detector plane at
//! `x' = dsd - dso`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::Image2D;
use crate::volume::{Boundary, Volume3D};

/// The eight acquisition angles, in degrees, used for multi-view input.
pub const DEFAULT_ANGLES: [f64; 8] = [0.0, 22.5, 45.0, 67.5, 90.0, 112.5, 135.0, 157.5];

pub const DEFAULT_DSO: f64 = 1000.0;
pub const DEFAULT_DSD: f64 = 1500.0;
pub const DEFAULT_DETECTOR_SPACING: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Beam {
    Parallel,
    Cone,
}

impl Beam {
    pub fn name(self) -> &'static str {
        match self {
            Beam::Parallel => "parallel",
            Beam::Cone => "cone",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Beam::Parallel),
            "cone" => Ok(Beam::Cone),
            other => Err(invalid(format!("unknown beam type `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionGeometry {
    pub beam: Beam,
    pub angle_deg: f64,
    /// Source to volume-center distance, mm (cone beam only).
    pub dso: f64,
    /// Source to detector distance, mm (cone beam only).
    pub dsd: f64,
    /// Detector size as `(rows, cols)`.
    pub detector_px: (usize, usize),
    /// Detector pixel pitch, mm.
    pub detector_spacing: f64,
    /// Offset `t` added after rotation, mm.
    pub translation: [f64; 3],
}

impl ProjectionGeometry {
    /// Parallel beam at 0° with the default distances and 1 mm pixels.
    pub fn parallel(rows: usize, cols: usize) -> Self {
        ProjectionGeometry {
            beam: Beam::Parallel,
            angle_deg: 0.0,
            dso: DEFAULT_DSO,
            dsd: DEFAULT_DSD,
            detector_px: (rows, cols),
            detector_spacing: DEFAULT_DETECTOR_SPACING,
            translation: [0.0; 3],
        }
    }

    pub fn cone(rows: usize, cols: usize, dso: f64, dsd: f64) -> Self {
        ProjectionGeometry {
            beam: Beam::Cone,
            dso,
            dsd,
            ..Self::parallel(rows, cols)
        }
    }

    pub fn with_angle(&self, angle_deg: f64) -> Self {
        ProjectionGeometry {
            angle_deg,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.detector_px;
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("detector must be at least 1x1, got {rows}x{cols}")));
        }
        if !(self.detector_spacing.is_finite() && self.detector_spacing > 0.0) {
            return Err(invalid(format!(
                "detector spacing must be > 0, got {}",
                self.detector_spacing
            )));
        }
        if !self.angle_deg.is_finite() || !self.translation.iter().all(|t| t.is_finite()) {
            return Err(invalid("angle and translation must be finite"));
        }
        if self.beam == Beam::Cone && !(self.dso > 0.0 && self.dsd > self.dso && self.dsd.is_finite()) {
            return Err(invalid(format!(
                "cone beam needs dsd > dso > 0, got dso={} dsd={}",
                self.dso, self.dsd
            )));
        }
        Ok(())
    }

    fn center_px(&self) -> (f64, f64) {
        let (rows, cols) = self.detector_px;
        ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0)
    }

    fn cos_sin(&self) -> (f64, f64) {
        let a = self.angle_deg.to_radians();
        (a.cos(), a.sin())
    }

    /// `p·R(θ) + t`.
    pub fn to_detector_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let (c, s) = self.cos_sin();
        let t = self.translation;
        [
            p[0] * c + p[1] * s + t[0],
            -p[0] * s + p[1] * c + t[1],
            p[2] + t[2],
        ]
    }

    /// Inverse of [`to_detector_frame`](Self::to_detector_frame).
    pub fn to_world(&self, q: [f64; 3]) -> [f64; 3] {
        let (c, s) = self.cos_sin();
        let t = self.translation;
        let (x, y, z) = (q[0] - t[0], q[1] - t[1], q[2] - t[2]);
        [x * c - y * s, x * s + y * c, z]
    }

    fn rotate_direction(&self, d: [f64; 3]) -> [f64; 3] {
        let (c, s) = self.cos_sin();
        [d[0] * c - d[1] * s, d[0] * s + d[1] * c, d[2]]
    }
}

/// Detector-plane offset of a world point, in mm as `(axial, lateral)`.
pub fn project_point_mm(p_xyz: [f64; 3], g: &ProjectionGeometry) -> Result<(f64, f64)> {
    let q = g.to_detector_frame(p_xyz);
    match g.beam {
        Beam::Parallel => Ok((q[2], q[1])),
        Beam::Cone => {
            let denom = g.dso + q[0];
            if denom <= 0.0 {
                return Err(Error::ProjectionDomain {
                    depth: q[0],
                    dso: g.dso,
                });
            }
            let m = g.dsd / denom;
            Ok((q[2] * m, q[1] * m))
        }
    }
}

/// Continuous detector pixel coordinates `(row, col)` of a world point.
pub fn project_point(p_xyz: [f64; 3], g: &ProjectionGeometry) -> Result<(f64, f64)> {
    let (ax, lat) = project_point_mm(p_xyz, g)?;
    let (cr, cc) = g.center_px();
    Ok((cr + ax / g.detector_spacing, cc + lat / g.detector_spacing))
}

/// World-space ray `(origin, unit direction)` through detector pixel `(r, c)`.
pub fn pixel_ray(g: &ProjectionGeometry, r: usize, c: usize) -> ([f64; 3], [f64; 3]) {
    let (cr, cc) = g.center_px();
    let ax = (r as f64 - cr) * g.detector_spacing;
    let lat = (c as f64 - cc) * g.detector_spacing;
    match g.beam {
        Beam::Parallel => (g.to_world([0.0, lat, ax]), g.rotate_direction([1.0, 0.0, 0.0])),
        Beam::Cone => {
            let src = [-g.dso, 0.0, 0.0];
            let dst = [g.dsd - g.dso, lat, ax];
            let d = [dst[0] - src[0], dst[1] - src[1], dst[2] - src[2]];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let d = d.map(|x| x / norm);
            (g.to_world(src), g.rotate_direction(d))
        }
    }
}

/// Renders a DRR with ray-march step `dVoxel / 2`.
pub fn render_drr(v: &Volume3D, g: &ProjectionGeometry) -> Result<Image2D> {
    let dvoxel = v.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    render_drr_with_step(v, g, dvoxel / 2.0)
}

/// Renders a DRR, each pixel the line integral of trilinear samples.
///
/// Each ray marches in equal steps along its dominant grid axis: the index
/// along that axis advances by `1/m` per step, with `m` the smallest integer
/// keeping the step length within `max_step` mm. Voxel planes of the
/// dominant axis then fall on step boundaries. Samples sit at step midpoints
/// and the pixel value is `Σ sample·step`. Only the region where trilinear
/// sampling can be nonzero (one voxel beyond the outermost centers) is
/// visited. Raw values are integrated with no exponential attenuation.
pub fn render_drr_with_step(v: &Volume3D, g: &ProjectionGeometry, max_step: f64) -> Result<Image2D> {
    g.validate()?;
    if !(max_step.is_finite() && max_step > 0.0) {
        return Err(invalid(format!("ray step must be > 0, got {max_step}")));
    }
    let (rows, cols) = g.detector_px;
    let data = (0..rows * cols)
        .into_par_iter()
        .map(|px| {
            let (origin, dir) = pixel_ray(g, px / cols, px % cols);
            march(v, origin, dir, max_step)
        })
        .collect();
    Image2D::new(rows, cols, g.detector_spacing, data)
}

fn march(v: &Volume3D, origin: [f64; 3], dir: [f64; 3], max_step: f64) -> f64 {
    let grid = v.grid();
    let start = grid.continuous_index(origin);
    // direction in index units per mm, (d, h, w) order
    let didx = [dir[2] / grid.spacing[0], dir[1] / grid.spacing[1], dir[0] / grid.spacing[2]];

    let mut s0 = f64::NEG_INFINITY;
    let mut s1 = f64::INFINITY;
    for a in 0..3 {
        let lo = -1.0;
        let hi = grid.dims[a] as f64;
        if didx[a] == 0.0 {
            if start[a] <= lo || start[a] >= hi {
                return 0.0;
            }
            continue;
        }
        let ta = (lo - start[a]) / didx[a];
        let tb = (hi - start[a]) / didx[a];
        s0 = s0.max(ta.min(tb));
        s1 = s1.min(ta.max(tb));
    }
    if s1 <= s0 {
        return 0.0;
    }

    let ax = (0..3)
        .max_by(|&a, &b| didx[a].abs().total_cmp(&didx[b].abs()))
        .unwrap_or(0);
    let rate = didx[ax].abs();
    let m = (1.0 / (max_step * rate)).ceil().max(1.0);
    let inc = 1.0 / m;
    let step = inc / rate;

    // whole dominant-axis cells covering [s0, s1]; samples beyond the
    // support of the other axes read zero
    let u0 = start[ax] + s0 * didx[ax];
    let u1 = start[ax] + s1 * didx[ax];
    let (lo, hi) = (u0.min(u1), u0.max(u1));
    let k0 = ((lo + 1.0) / inc).floor() as i64;
    let k1 = ((hi + 1.0) / inc).ceil() as i64;
    let mut acc = 0.0;
    for k in k0..k1 {
        let u = -1.0 + (k as f64 + 0.5) * inc;
        let s = (u - start[ax]) / didx[ax];
        let at = [start[0] + s * didx[0], start[1] + s * didx[1], start[2] + s * didx[2]];
        acc += v.sample(at, Boundary::Constant(0.0));
    }
    acc * step
}

/// One DRR per angle, sharing every other geometry parameter.
pub fn generate_views(v: &Volume3D, angles: &[f64], base: &ProjectionGeometry) -> Result<Vec<Image2D>> {
    if angles.is_empty() {
        return Err(Error::Empty("projection angle"));
    }
    angles
        .iter()
        .map(|&a| render_drr(v, &base.with_angle(a)))
        .collect()
}

/// Geometry and intensity mapping stored next to each DRR image file.
#[derive(Clone, Debug, PartialEq)]
pub struct Sidecar {
    pub geometry: ProjectionGeometry,
    /// Image value per PGM count.
    pub value_per_count: f64,
    pub image_max: f64,
}

impl Sidecar {
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut out = String::from("# DRR sidecar: value = count * value_per_count\n");
        let _ = writeln!(out, "beam = {}", g.beam.name());
        let _ = writeln!(out, "angle_deg = {}", g.angle_deg);
        let _ = writeln!(out, "dso_mm = {}", g.dso);
        let _ = writeln!(out, "dsd_mm = {}", g.dsd);
        let _ = writeln!(out, "detector_rows = {}", g.detector_px.0);
        let _ = writeln!(out, "detector_cols = {}", g.detector_px.1);
        let _ = writeln!(out, "detector_spacing_mm = {}", g.detector_spacing);
        let [tx, ty, tz] = g.translation;
        let _ = writeln!(out, "translation_mm = {tx} {ty} {tz}");
        let _ = writeln!(out, "value_per_count = {}", self.value_per_count);
        let _ = writeln!(out, "image_max = {}", self.image_max);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            format: "sidecar",
            reason,
        };
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt(format!("expected `key = value`, got `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| fmt(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| fmt(format!("{k}: {e}")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?.parse::<usize>().map_err(|e| fmt(format!("{k}: {e}")))
        };
        let t: Vec<f64> = get("translation_mm")?
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fmt(format!("translation_mm: {e}")))?;
        let translation: [f64; 3] = t
            .try_into()
            .map_err(|_| fmt("translation_mm needs three values".into()))?;
        let geometry = ProjectionGeometry {
            beam: Beam::parse(get("beam")?)?,
            angle_deg: num("angle_deg")?,
            dso: num("dso_mm")?,
            dsd: num("dsd_mm")?,
            detector_px: (count("detector_rows")?, count("detector_cols")?),
            detector_spacing: num("detector_spacing_mm")?,
            translation,
        };
        geometry.validate()?;
        Ok(Sidecar {
            geometry,
            value_per_count: num("value_per_count")?,
            image_max: num("image_max")?,
        })
    }
}
