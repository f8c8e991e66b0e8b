//! HU clipping, normalization and grid resampling.

use rayon::prelude::*;

use super::{trilinear, Boundary, GridSpec, ValueUnit, Volume3D};
use crate::error::{invalid, Error, Result};

/// Value read for resampling positions outside the source grid.
pub const DEFAULT_BACKGROUND: f64 = 0.0;

fn require_hu(v: &Volume3D) -> Result<()> {
    if v.unit() != ValueUnit::Hu {
        return Err(Error::UnitMismatch {
            expected: ValueUnit::Hu.name(),
            found: v.unit().name(),
        });
    }
    Ok(())
}

fn require_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(Error::DegenerateRange { lo, hi });
    }
    Ok(())
}

/// Clamps every voxel of an HU volume into `[lo, hi]`.
pub fn clip_values(v: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D> {
    require_hu(v)?;
    require_range(lo, hi)?;
    v.map(|x| x.clamp(lo, hi))
}

/// Maps a clipped HU volume onto `[0, 1]` via `(x - lo) / (hi - lo)`.
pub fn normalize(v: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D> {
    require_hu(v)?;
    require_range(lo, hi)?;
    if v.min() < lo || v.max() > hi {
        return Err(invalid(format!(
            "volume spans [{}, {}], clip to [{lo}, {hi}] before normalizing",
            v.min(),
            v.max()
        )));
    }
    let width = hi - lo;
    let data = v
        .data()
        .par_iter()
        .map(|&x| ((x - lo) / width).clamp(0.0, 1.0))
        .collect();
    Volume3D::new(*v.grid(), ValueUnit::Normalized, data)
}

/// Inverse of [`normalize`].
pub fn denormalize(v: &Volume3D, lo: f64, hi: f64) -> Result<Volume3D> {
    if v.unit() != ValueUnit::Normalized {
        return Err(Error::UnitMismatch {
            expected: ValueUnit::Normalized.name(),
            found: v.unit().name(),
        });
    }
    require_range(lo, hi)?;
    let width = hi - lo;
    let data = v.data().par_iter().map(|&x| lo + x * width).collect();
    Volume3D::new(*v.grid(), ValueUnit::Hu, data)
}

/// Resamples onto an isotropic grid of `target` mm, background [`DEFAULT_BACKGROUND`].
pub fn resample_isotropic(v: &Volume3D, target: f64) -> Result<Volume3D> {
    resample_isotropic_with(v, target, DEFAULT_BACKGROUND)
}

/// Resamples onto an isotropic grid of `target` mm with trilinear interpolation.
///
/// The output covers the same physical extent and keeps the volume center
/// fixed. Samples whose neighbors leave the source grid read `background`.
pub fn resample_isotropic_with(v: &Volume3D, target: f64, background: f64) -> Result<Volume3D> {
    if !(target.is_finite() && target > 0.0) {
        return Err(invalid(format!("target spacing must be > 0, got {target}")));
    }
    let src = v.grid();
    if src.spacing == [target; 3] {
        return Ok(v.clone());
    }
    let extent = src.extent();
    let dims: [usize; 3] = std::array::from_fn(|a| ((extent[a] / target).round() as usize).max(1));
    let center = src.center();
    let origin = std::array::from_fn(|a| center[a] - (dims[a] as f64 - 1.0) / 2.0 * target);
    let dst = GridSpec::new(dims, [target; 3], origin)?;

    let offset: [f64; 3] = std::array::from_fn(|a| (origin[a] - src.origin[a]) / src.spacing[a]);
    let ratio: [f64; 3] = std::array::from_fn(|a| target / src.spacing[a]);
    let boundary = Boundary::Constant(background);
    let data = (0..dst.len())
        .into_par_iter()
        .map(|idx| {
            let n = dst.unravel(idx);
            let at = std::array::from_fn(|a| offset[a] + n[a] as f64 * ratio[a]);
            trilinear(v.data(), src.dims, at, boundary)
        })
        .collect();
    Volume3D::new(dst, v.unit(), data)
}

/// Center-crops to the largest centered cube, then resizes trilinearly to `n³`.
///
/// Resizing treats the crop as edge-extended, so constant volumes stay
/// constant. An input that is already `n³` comes back unchanged.
pub fn crop_resize_cube(v: &Volume3D, n: usize) -> Result<Volume3D> {
    if n == 0 {
        return Err(invalid("cube size must be >= 1"));
    }
    let src = v.grid();
    let m = *src.dims.iter().min().expect("three dims");
    let off: [usize; 3] = std::array::from_fn(|a| (src.dims[a] - m) / 2);

    let crop_origin = src.world(off[0], off[1], off[2]);
    let crop_grid = GridSpec::new([m; 3], src.spacing, crop_origin)?;
    let crop: Vec<f64> = (0..crop_grid.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = crop_grid.unravel(idx);
            v.get(i + off[0], j + off[1], k + off[2])
        })
        .collect();
    if m == n {
        return Volume3D::new(crop_grid, v.unit(), crop);
    }

    let scale = m as f64 / n as f64;
    let spacing: [f64; 3] = std::array::from_fn(|a| src.spacing[a] * scale);
    let center = crop_grid.center();
    let origin = std::array::from_fn(|a| center[a] - (n as f64 - 1.0) / 2.0 * spacing[a]);
    let dst = GridSpec::new([n; 3], spacing, origin)?;
    let data = (0..dst.len())
        .into_par_iter()
        .map(|idx| {
            let o = dst.unravel(idx);
            let at = std::array::from_fn(|a| (o[a] as f64 + 0.5) * scale - 0.5);
            trilinear(&crop, [m; 3], at, Boundary::Clamp)
        })
        .collect();
    Volume3D::new(dst, v.unit(), data)
}
