//! Volumetric grids.
//!
//! Grids are indexed `(i, j, k)` over dimensions `(d, h, w)`. World axes map
//! as `i -> z` (axial), `j -> y`, `k -> x`, so `k` is the fastest-varying index
//! in memory. `spacing` and `origin` are stored in the same `(d, h, w)` order
//! and refer to voxel centers.

mod io;
pub mod phantom;
mod preprocess;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::Image2D;

pub use io::{read_vol1, read_vol1_file, write_vol1, write_vol1_file, VOL1_MAGIC};
pub use phantom::{make_phantom, Ellipsoid, GaussianBlob, Phantom};
pub use preprocess::{
    clip_values, crop_resize_cube, denormalize, normalize, resample_isotropic,
    resample_isotropic_with, DEFAULT_BACKGROUND,
};

/// Value unit carried by a volume.
///
/// `Hu` covers any raw physical quantity (Hounsfield units, Gy, feature
/// responses); `Normalized` data is confined to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueUnit {
    Hu,
    Normalized,
}

impl ValueUnit {
    pub fn name(self) -> &'static str {
        match self {
            ValueUnit::Hu => "HU",
            ValueUnit::Normalized => "normalized",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ValueUnit::Hu => 0,
            ValueUnit::Normalized => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ValueUnit::Hu),
            1 => Some(ValueUnit::Normalized),
            _ => None,
        }
    }
}

/// How to treat sample positions outside the voxel grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Boundary {
    /// Neighbors outside the grid read as this value.
    Constant(f64),
    /// Neighbors outside the grid read the nearest edge voxel.
    Clamp,
}

/// Orthogonal slicing plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Plane {
    /// Fixed `i` (z); image rows follow `j`, columns `k`.
    Axial,
    /// Fixed `j` (y); image rows follow `i`, columns `k`.
    Coronal,
    /// Fixed `k` (x); image rows follow `i`, columns `j`.
    Sagittal,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            _ => Err(invalid(format!("unknown plane {s:?}"))),
        }
    }

    /// Grid axis held fixed by this plane.
    pub fn axis(self) -> usize {
        match self {
            Plane::Axial => 0,
            Plane::Coronal => 1,
            Plane::Sagittal => 2,
        }
    }
}

/// Shape and placement of a regular 3D grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let spec = GridSpec {
            dims,
            spacing,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid whose center sits at world `(0, 0, 0)`.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = std::array::from_fn(|a| -((dims[a] as f64 - 1.0) / 2.0) * spacing[a]);
        Self::new(dims, spacing, origin)
    }

    pub fn cube(n: usize, spacing: f64) -> Result<Self> {
        Self::centered([n; 3], [spacing; 3])
    }

    fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(invalid(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if !self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(invalid(format!(
                "grid spacing must be > 0, got {:?}",
                self.spacing
            )));
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    /// World position of voxel `(i, j, k)` in `(d, h, w)` axis order.
    pub fn world(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = [i as f64, j as f64, k as f64];
        std::array::from_fn(|a| self.origin[a] + idx[a] * self.spacing[a])
    }

    /// World position of voxel `(i, j, k)` as an `(x, y, z)` point.
    pub fn world_xyz(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let [z, y, x] = self.world(i, j, k);
        [x, y, z]
    }

    /// Continuous voxel index of an `(x, y, z)` world point.
    pub fn continuous_index(&self, p_xyz: [f64; 3]) -> [f64; 3] {
        let p = [p_xyz[2], p_xyz[1], p_xyz[0]];
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    /// Every voxel center as an `(x, y, z)` point, in memory order.
    pub fn points_xyz(&self) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|idx| {
                let [i, j, k] = self.unravel(idx);
                self.world_xyz(i, j, k)
            })
            .collect()
    }

    /// World center of the grid in `(d, h, w)` axis order.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (self.dims[a] as f64 - 1.0) / 2.0 * self.spacing[a])
    }

    /// Physical extent `dims * spacing` along each axis.
    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }
}

/// An immutable scalar 3D grid with spacing, origin and a value-unit tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    grid: GridSpec,
    unit: ValueUnit,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: GridSpec, unit: ValueUnit, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "grid {:?} holds {} voxels, got {} values",
                grid.dims,
                grid.len(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite voxel value {bad}")));
        }
        if unit == ValueUnit::Normalized {
            if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(invalid(format!(
                    "normalized volume holds {bad}, outside [0, 1]"
                )));
            }
        }
        Ok(Volume3D { grid, unit, data })
    }

    pub fn zeros(grid: GridSpec, unit: ValueUnit) -> Self {
        Volume3D {
            grid,
            unit,
            data: vec![0.0; grid.len()],
        }
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn<F>(grid: GridSpec, unit: ValueUnit, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64 + Sync,
    {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = grid.unravel(idx);
                f(i, j, k)
            })
            .collect();
        Self::new(grid, unit, data)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.grid.origin
    }

    pub fn unit(&self) -> ValueUnit {
        self.unit
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.linear_index(i, j, k)]
    }

    /// Same voxels placed on a different grid of identical dims.
    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        if grid.dims != self.grid.dims {
            return Err(Error::Shape(format!(
                "cannot re-grid {:?} as {:?}",
                self.grid.dims, grid.dims
            )));
        }
        self.grid = grid;
        Ok(self)
    }

    /// Same voxels with a different unit tag (validated).
    pub fn with_unit(self, unit: ValueUnit) -> Result<Self> {
        Self::new(self.grid, unit, self.data)
    }

    /// Elementwise map preserving grid and unit.
    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let data = self.data.par_iter().map(|&v| f(v)).collect();
        Self::new(self.grid, self.unit, data)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Extracts one orthogonal slice.
    pub fn slice(&self, plane: Plane, index: usize) -> Result<Image2D> {
        let [d, h, w] = self.grid.dims;
        let len = self.grid.dims[plane.axis()];
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let sp = self.grid.spacing;
        let (rows, cols, spacing, data): (usize, usize, f64, Vec<f64>) = match plane {
            Plane::Axial => (h, w, sp[1], self.data[index * h * w..(index + 1) * h * w].to_vec()),
            Plane::Coronal => (
                d,
                w,
                sp[0],
                (0..d).flat_map(|i| (0..w).map(move |k| (i, k))).map(|(i, k)| self.get(i, index, k)).collect(),
            ),
            Plane::Sagittal => (
                d,
                h,
                sp[0],
                (0..d).flat_map(|i| (0..h).map(move |j| (i, j))).map(|(i, j)| self.get(i, j, index)).collect(),
            ),
        };
        Image2D::new(rows, cols, spacing, data)
    }

    /// Trilinear sample at continuous voxel index `(i, j, k)`.
    #[inline]
    pub fn sample(&self, idx: [f64; 3], boundary: Boundary) -> f64 {
        trilinear(&self.data, self.grid.dims, idx, boundary)
    }

    /// Trilinear sample at an `(x, y, z)` world point.
    #[inline]
    pub fn sample_world(&self, p_xyz: [f64; 3], boundary: Boundary) -> f64 {
        self.sample(self.grid.continuous_index(p_xyz), boundary)
    }
}

/// Trilinear interpolation over a `(d, h, w)` buffer at a continuous index.
pub(crate) fn trilinear(data: &[f64], dims: [usize; 3], idx: [f64; 3], boundary: Boundary) -> f64 {
    let [d, h, w] = dims;
    let fi = idx[0].floor();
    let fj = idx[1].floor();
    let fk = idx[2].floor();
    let (ti, tj, tk) = (idx[0] - fi, idx[1] - fj, idx[2] - fk);
    let (i0, j0, k0) = (fi as isize, fj as isize, fk as isize);

    let fetch = |i: isize, j: isize, k: isize| -> f64 {
        match boundary {
            Boundary::Constant(bg) => {
                if i < 0 || j < 0 || k < 0 || i >= d as isize || j >= h as isize || k >= w as isize {
                    bg
                } else {
                    data[(i as usize * h + j as usize) * w + k as usize]
                }
            }
            Boundary::Clamp => {
                let i = i.clamp(0, d as isize - 1) as usize;
                let j = j.clamp(0, h as isize - 1) as usize;
                let k = k.clamp(0, w as isize - 1) as usize;
                data[(i * h + j) * w + k]
            }
        }
    };

    if let Boundary::Constant(bg) = boundary {
        if i0 < -1 || j0 < -1 || k0 < -1 || i0 >= d as isize || j0 >= h as isize || k0 >= w as isize {
            return bg;
        }
    }

    let mut acc = 0.0;
    for (di, wi) in [(0, 1.0 - ti), (1, ti)] {
        if wi == 0.0 {
            continue;
        }
        for (dj, wj) in [(0, 1.0 - tj), (1, tj)] {
            if wj == 0.0 {
                continue;
            }
            for (dk, wk) in [(0, 1.0 - tk), (1, tk)] {
                if wk == 0.0 {
                    continue;
                }
                acc += wi * wj * wk * fetch(i0 + di, j0 + dj, k0 + dk);
            }
        }
    }
    acc
}
