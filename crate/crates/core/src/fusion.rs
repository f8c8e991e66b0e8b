//! Multi-view feature fusion.
//!
//! Each x-ray is turned into a multi-channel feature image, every grid point
//! of the conditioning volume is projected onto that image through the
//! view's geometry and sampled bilinearly, and the per-view volumes are
//! averaged elementwise.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::Image2D;
use crate::projector::{project_point, ProjectionGeometry};
use crate::volume::{read_vol1, write_vol1, GridSpec, ValueUnit, Volume3D};

pub const VOLC_MAGIC: &[u8; 4] = b"VOLC";

/// An x-ray image together with the geometry it was acquired with.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: Image2D,
    pub geometry: ProjectionGeometry,
}

/// Multi-channel detector-plane features of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    channels: Vec<Image2D>,
    geometry: ProjectionGeometry,
}

impl FeatureImage {
    /// Every channel must match the geometry's detector size.
    pub fn new(channels: Vec<Image2D>, geometry: ProjectionGeometry) -> Result<Self> {
        geometry.validate()?;
        if channels.is_empty() {
            return Err(Error::Empty("feature channel"));
        }
        for ch in &channels {
            if ch.shape() != geometry.detector_px {
                return Err(Error::Shape(format!(
                    "feature channel {:?} does not match detector {:?}",
                    ch.shape(),
                    geometry.detector_px
                )));
            }
            if ch.data().iter().any(|x| !x.is_finite()) {
                return Err(invalid("feature values must be finite"));
            }
        }
        Ok(FeatureImage { channels, geometry })
    }

    pub fn channels(&self) -> &[Image2D] {
        &self.channels
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }
}

/// `c`-channel 3D grid, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    channels: usize,
    grid: GridSpec,
    data: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(channels: usize, grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Empty("feature channel"));
        }
        if data.len() != channels * grid.len() {
            return Err(Error::Shape(format!(
                "{channels} channels over {:?} need {} values, got {}",
                grid.dims,
                channels * grid.len(),
                data.len()
            )));
        }
        Ok(FeatureVolume { channels, grid, data })
    }

    pub fn zeros(channels: usize, grid: GridSpec) -> Self {
        FeatureVolume {
            channels,
            grid,
            data: vec![0.0; channels * grid.len()],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// True for the all-zero absent-condition sentinel.
    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        FeatureVolume {
            data: self.data.iter().map(|x| a * x).collect(),
            ..self.clone()
        }
    }

    pub fn channel_volume(&self, c: usize) -> Result<Volume3D> {
        if c >= self.channels {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: self.channels,
            });
        }
        Volume3D::new(self.grid, ValueUnit::Hu, self.channel(c).to_vec())
    }

    fn same_layout(&self, other: &FeatureVolume) -> bool {
        self.channels == other.channels && self.grid.dims == other.grid.dims
    }

    /// Writes `VOLC`: magic, `u32` channel count, then one `VOL1` record per channel.
    pub fn write_volc<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(VOLC_MAGIC)?;
        let c = u32::try_from(self.channels).map_err(|_| invalid("too many channels"))?;
        w.write_all(&c.to_le_bytes())?;
        for ch in 0..self.channels {
            write_vol1(w, &self.channel_volume(ch)?)?;
        }
        Ok(())
    }

    pub fn read_volc<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            format: "VOLC",
            reason,
        };
        let mut head = [0u8; 8];
        r.read_exact(&mut head)
            .map_err(|e| fmt(format!("truncated header: {e}")))?;
        if &head[..4] != VOLC_MAGIC {
            return Err(fmt(format!("bad magic {:?}", &head[..4])));
        }
        let channels = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
        if channels == 0 {
            return Err(fmt("zero channels".into()));
        }
        let mut grid = None;
        let mut data = Vec::new();
        for _ in 0..channels {
            let v = read_vol1(r)?;
            match grid {
                None => grid = Some(*v.grid()),
                Some(g) if g.dims != v.dims() => {
                    return Err(fmt("channels disagree on grid dims".into()));
                }
                _ => {}
            }
            data.extend(v.into_data());
        }
        FeatureVolume::new(channels, grid.expect("at least one channel"), data)
    }
}

/// Maps an x-ray image to per-pixel feature channels.
pub trait FeatureExtractor: Sync {
    fn channels(&self) -> usize;

    /// Spatial size `(h', w')` of the output for an input of `(rows, cols)`.
    fn output_shape(&self, rows: usize, cols: usize) -> (usize, usize) {
        (rows, cols)
    }

    /// One image per channel, each of [`output_shape`](Self::output_shape).
    fn features(&self, img: &Image2D) -> Result<Vec<Image2D>>;
}

/// Single channel equal to the pixel values.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn channels(&self) -> usize {
        1
    }

    fn features(&self, img: &Image2D) -> Result<Vec<Image2D>> {
        Ok(vec![img.clone()])
    }
}

/// Three difference-of-Gaussians bands with edge-replicated borders.
///
/// Each band is `G(σ) - G(2σ)` for σ in [`BandPassExtractor::SIGMAS`], so
/// constant images map to (numerically) zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct BandPassExtractor;

impl BandPassExtractor {
    pub const SIGMAS: [f64; 3] = [0.75, 1.5, 3.0];
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn blur(img: &Image2D, kernel: &[f64]) -> Vec<f64> {
    let (rows, cols) = img.shape();
    let radius = (kernel.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let cc = (c as isize + i as isize - radius).clamp(0, cols as isize - 1) as usize;
                    w * src[r * cols + cc]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let rr = (r as isize + i as isize - radius).clamp(0, rows as isize - 1) as usize;
                    w * tmp[rr * cols + c]
                })
                .sum();
        }
    }
    out
}

impl FeatureExtractor for BandPassExtractor {
    fn channels(&self) -> usize {
        Self::SIGMAS.len()
    }

    fn features(&self, img: &Image2D) -> Result<Vec<Image2D>> {
        Self::SIGMAS
            .iter()
            .map(|&s| {
                let fine = blur(img, &gaussian_kernel(s));
                let coarse = blur(img, &gaussian_kernel(2.0 * s));
                let band = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
                Image2D::new(img.rows(), img.cols(), img.pixel_spacing(), band)
            })
            .collect()
    }
}

/// Runs an extractor on one view and attaches the matching geometry.
///
/// When the extractor changes resolution, the detector pitch is rescaled so
/// the features still cover the same physical detector.
pub fn extract(extractor: &dyn FeatureExtractor, view: &View) -> Result<FeatureImage> {
    let (rows, cols) = view.image.shape();
    let (h, w) = extractor.output_shape(rows, cols);
    let channels = extractor.features(&view.image)?;
    if channels.len() != extractor.channels() {
        return Err(Error::Shape(format!(
            "extractor declared {} channels, produced {}",
            extractor.channels(),
            channels.len()
        )));
    }
    let mut geometry = view.geometry.clone();
    if (h, w) != (rows, cols) {
        let pitch_r = rows as f64 * geometry.detector_spacing / h as f64;
        let pitch_c = cols as f64 * geometry.detector_spacing / w as f64;
        if (pitch_r - pitch_c).abs() > 1e-12 * pitch_r {
            return Err(invalid("extractor must rescale rows and columns alike"));
        }
        geometry.detector_spacing = pitch_r;
    }
    geometry.detector_px = (h, w);
    FeatureImage::new(channels, geometry)
}

/// Samples a feature image at the projection of every grid point.
///
/// Points projecting off the detector read 0 in every channel.
pub fn backproject(f: &FeatureImage, grid: &GridSpec) -> Result<FeatureVolume> {
    let n = grid.len();
    let g = f.geometry();
    let coords: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = grid.unravel(idx);
            project_point(grid.world_xyz(i, j, k), g)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * f.n_channels());
    for ch in f.channels() {
        data.par_extend(coords.par_iter().map(|&(u, v)| ch.sample_bilinear(u, v)));
    }
    FeatureVolume::new(f.n_channels(), *grid, data)
}

/// Elementwise mean of per-view feature volumes.
///
/// Values at each position are sorted before accumulating a running mean,
/// which makes the result independent of input order and exact for
/// identical inputs.
pub fn fuse(volumes: &[FeatureVolume]) -> Result<FeatureVolume> {
    let first = volumes.first().ok_or(Error::Empty("feature volume"))?;
    if let Some(bad) = volumes.iter().find(|v| !first.same_layout(v)) {
        return Err(Error::Shape(format!(
            "cannot fuse {}x{:?} with {}x{:?}",
            first.channels, first.grid.dims, bad.channels, bad.grid.dims
        )));
    }
    let data = (0..first.data.len())
        .into_par_iter()
        .map(|idx| {
            let mut vals: Vec<f64> = volumes.iter().map(|v| v.data[idx]).collect();
            vals.sort_by(f64::total_cmp);
            let mut mean = vals[0];
            for (k, x) in vals.iter().enumerate().skip(1) {
                mean += (x - mean) / (k + 1) as f64;
            }
            mean
        })
        .collect();
    FeatureVolume::new(first.channels, first.grid, data)
}

/// Extracts, backprojects and fuses all views onto `grid`.
pub fn build_condition(views: &[View], extractor: &dyn FeatureExtractor, grid: &GridSpec) -> Result<FeatureVolume> {
    if views.is_empty() {
        return Err(Error::Empty("x-ray view"));
    }
    let per_view = views
        .iter()
        .map(|v| backproject(&extract(extractor, v)?, grid))
        .collect::<Result<Vec<_>>>()?;
    fuse(&per_view)
}
