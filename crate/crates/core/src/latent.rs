//! Vector-quantized latent layer: codebook, autoencoder interface and losses.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::diffusion::LatentCode;
use crate::error::{invalid, Error, Result};
use crate::fusion::FeatureExtractor;
use crate::image::Image2D;
use crate::rng::{gaussian_vec, stream};
use crate::volume::{Boundary, GridSpec, Plane, ValueUnit, Volume3D};

pub const CBK1_MAGIC: &[u8; 4] = b"CBK1";
pub const DEFAULT_CODEBOOK_SIZE: usize = 4096;
pub const DEFAULT_CODE_DIM: usize = 8;
/// Spatial downsampling factor per axis.
pub const COMPRESSION: usize = 2;

/// Finite dictionary of distinct embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    count: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl Codebook {
    /// Builds a codebook from `count` row-major entries of length `dim`.
    pub fn new(count: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("codebook entry"));
        }
        if dim == 0 {
            return Err(invalid("codebook dimension must be >= 1"));
        }
        if entries.len() != count * dim {
            return Err(Error::Shape(format!(
                "codebook {count}x{dim} needs {} values, got {}",
                count * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(invalid("codebook entries must be finite"));
        }
        let mut seen = HashSet::with_capacity(count);
        for e in entries.chunks_exact(dim) {
            let key: Vec<u64> = e.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(invalid("codebook entries must be distinct"));
            }
        }
        Ok(Codebook { count, dim, entries })
    }

    /// Standard-normal entries from a seeded stream, rounded to `f32` so
    /// the codebook survives a CBK1 round trip unchanged.
    pub fn random(count: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed);
        let entries = gaussian_vec(&mut rng, count * dim)
            .into_iter()
            .map(|v| v as f32 as f64)
            .collect();
        Self::new(count, dim, entries)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, idx: usize) -> &[f64] {
        &self.entries[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Nearest entry by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (idx, e) in self.entries.chunks_exact(self.dim).enumerate() {
            let d: f64 = e.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (idx, d);
            }
        }
        best
    }

    pub fn write_cbk1<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CBK1_MAGIC)?;
        w.write_all(&(self.count as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.entries {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cbk1<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            format: "CBK1",
            reason: reason.to_string(),
        };
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != CBK1_MAGIC {
            return Err(bad("bad magic"));
        }
        let count = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; count * dim * 4];
        r.read_exact(&mut buf).map_err(|_| bad("truncated payload"))?;
        let entries = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::new(count, dim, entries)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_cbk1(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::read_cbk1(&mut BufReader::new(File::open(path)?))
    }
}

/// Output of [`quantize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// Selected entry per spatial position.
    pub indices: Vec<usize>,
    /// Latent with every vector replaced by its entry.
    pub z_q: LatentCode,
    /// Mean squared distance per position.
    pub quant_error: f64,
}

/// Snaps every latent vector to its nearest codebook entry.
///
/// `z` has shape `[C, ...]` with `C` equal to the codebook dimension; the
/// vector at a position collects the `C` channel values there.
pub fn quantize(z: &LatentCode, codebook: &Codebook) -> Result<Quantized> {
    let dim = codebook.dim();
    if z.shape().first() != Some(&dim) {
        return Err(Error::Shape(format!(
            "latent shape {:?} must lead with codebook dimension {dim}",
            z.shape()
        )));
    }
    let spatial = z.len() / dim;
    let data = z.data();
    let picks: Vec<(usize, f64)> = (0..spatial)
        .into_par_iter()
        .map(|p| {
            let v: Vec<f64> = (0..dim).map(|c| data[c * spatial + p]).collect();
            codebook.nearest(&v)
        })
        .collect();
    let mut out = vec![0.0; z.len()];
    for (p, (idx, _)) in picks.iter().enumerate() {
        for (c, v) in codebook.entry(*idx).iter().enumerate() {
            out[c * spatial + p] = *v;
        }
    }
    let quant_error = if spatial == 0 {
        0.0
    } else {
        picks.iter().map(|(_, d)| d).sum::<f64>() / spatial as f64
    };
    Ok(Quantized {
        indices: picks.into_iter().map(|(i, _)| i).collect(),
        z_q: LatentCode::new(z.shape().to_vec(), out, z.t)?,
        quant_error,
    })
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Individual terms of the vector-quantized autoencoder objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqvaeTerms {
    pub reconstruction: f64,
    pub codebook: f64,
    /// Already multiplied by the commitment weight.
    pub commitment: f64,
}

impl VqvaeTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.codebook + self.commitment
    }
}

/// Reconstruction MSE plus codebook and weighted commitment terms.
///
/// Both latent terms are `mean((z_e − z_q)²)`; they differ only in which
/// side the gradient stops on, which plain evaluation does not see.
pub fn vqvae_terms(
    x: &Volume3D,
    x_hat: &Volume3D,
    z_e: &LatentCode,
    z_q: &LatentCode,
    commit_weight: f64,
) -> Result<VqvaeTerms> {
    if x.dims() != x_hat.dims() {
        return Err(Error::Shape(format!("volumes {:?} vs {:?}", x.dims(), x_hat.dims())));
    }
    if z_e.shape() != z_q.shape() {
        return Err(Error::Shape(format!("latents {:?} vs {:?}", z_e.shape(), z_q.shape())));
    }
    let latent = mean_sq_diff(z_e.data(), z_q.data());
    Ok(VqvaeTerms {
        reconstruction: mean_sq_diff(x.data(), x_hat.data()),
        codebook: latent,
        commitment: commit_weight * latent,
    })
}

pub fn vqvae_loss(
    x: &Volume3D,
    x_hat: &Volume3D,
    z_e: &LatentCode,
    z_q: &LatentCode,
    commit_weight: f64,
) -> Result<f64> {
    Ok(vqvae_terms(x, x_hat, z_e, z_q, commit_weight)?.total())
}

/// Hinge discriminator loss `mean(max(0, 1 − d_real)) + mean(max(0, 1 + d_fake))`.
///
/// An empty score grid contributes 0.
pub fn hinge_disc_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let mean = |s: &[f64], f: &dyn Fn(f64) -> f64| {
        if s.is_empty() {
            0.0
        } else {
            s.iter().map(|&v| f(v)).sum::<f64>() / s.len() as f64
        }
    };
    mean(d_real, &|v| (1.0 - v).max(0.0)) + mean(d_fake, &|v| (1.0 + v).max(0.0))
}

/// Hinge loss of a 2D critic on axial slice `s` of a real and a generated volume.
pub fn slice_disc_loss(
    y: &Volume3D,
    y_hat: &Volume3D,
    s: usize,
    d2: &dyn Fn(&Image2D) -> Vec<f64>,
) -> Result<f64> {
    if y.dims() != y_hat.dims() {
        return Err(Error::Shape(format!("volumes {:?} vs {:?}", y.dims(), y_hat.dims())));
    }
    let real = d2(&y.slice(Plane::Axial, s)?);
    let fake = d2(&y_hat.slice(Plane::Axial, s)?);
    Ok(hinge_disc_loss(&real, &fake))
}

/// Mean squared feature distance, averaged over slices.
pub fn perceptual_loss(a: &[Image2D], b: &[Image2D], feat: &dyn FeatureExtractor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} slices vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("slice"));
    }
    let per_slice = a
        .par_iter()
        .zip(b)
        .map(|(sa, sb)| {
            if sa.shape() != sb.shape() {
                return Err(Error::Shape(format!("slice {:?} vs {:?}", sa.shape(), sb.shape())));
            }
            let fa = feat.features(sa)?;
            let fb = feat.features(sb)?;
            let n: usize = fa.iter().map(|f| f.data().len()).sum();
            let sq: f64 = fa
                .iter()
                .zip(&fb)
                .flat_map(|(x, y)| x.data().iter().zip(y.data()))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            Ok(sq / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_slice.iter().sum::<f64>() / per_slice.len() as f64)
}

/// Weights `(λ1, λ2, λ3)` of the discriminator and generator objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub disc: f64,
    pub vqvae: f64,
    pub perceptual: f64,
}

impl LossWeights {
    pub fn new(disc: f64, vqvae: f64, perceptual: f64) -> Result<Self> {
        if [disc, vqvae, perceptual].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("loss weights must be finite and nonnegative"));
        }
        Ok(LossWeights {
            disc,
            vqvae,
            perceptual,
        })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            disc: 1.0,
            vqvae: 1.0,
            perceptual: 1.0,
        }
    }
}

/// Returns `(L_D, L_G)` with `L_D = λ1·(d3 + d2)` and `L_G = λ2·vq + λ3·p`.
pub fn weighted_objectives(loss_d3: f64, loss_d2: f64, loss_vqvae: f64, loss_p: f64, w: &LossWeights) -> (f64, f64) {
    (
        w.disc * (loss_d3 + loss_d2),
        w.vqvae * loss_vqvae + w.perceptual * loss_p,
    )
}

/// Latent grid paired with a volume grid: half the dims, twice the spacing,
/// same center.
pub fn latent_grid_for(grid: &GridSpec) -> Result<GridSpec> {
    if grid.dims.iter().any(|d| d % COMPRESSION != 0) {
        return Err(Error::Shape(format!(
            "volume dims {:?} must be divisible by {COMPRESSION}",
            grid.dims
        )));
    }
    let f = COMPRESSION as f64;
    let dims = grid.dims.map(|d| d / COMPRESSION);
    let spacing = grid.spacing.map(|s| s * f);
    let center = grid.center();
    let origin = std::array::from_fn(|a| center[a] - (dims[a] as f64 - 1.0) / 2.0 * spacing[a]);
    GridSpec::new(dims, spacing, origin)
}

/// Encoder/decoder pair between normalized volumes and latent codes.
pub trait AutoencoderPair: Sync {
    /// Channels per latent position.
    fn latent_channels(&self) -> usize;

    /// Latent shape `[C, d, h, w]` for a volume grid.
    fn latent_shape(&self, grid: &GridSpec) -> Result<Vec<usize>> {
        let g = latent_grid_for(grid)?;
        Ok(vec![self.latent_channels(), g.dims[0], g.dims[1], g.dims[2]])
    }

    fn encode(&self, v: &Volume3D) -> Result<LatentCode>;

    /// Decodes onto `target`, returning a normalized volume.
    fn decode(&self, z: &LatentCode, target: &GridSpec) -> Result<Volume3D>;
}

/// Fixed, non-learned autoencoder.
///
/// Encoding average-pools 2×2×2 blocks and lifts each pooled value `s` to
/// `s·L` for a fixed vector `L`. Decoding projects back with `L/‖L‖²` and
/// upsamples trilinearly (edge-clamped) onto the target grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyAutoencoder {
    lift: Vec<f64>,
}

impl ToyAutoencoder {
    pub const DEFAULT_LIFT: [f64; DEFAULT_CODE_DIM] = [1.0, -0.5, 0.75, 0.25, -1.0, 0.5, -0.25, 0.125];

    pub fn new(lift: Vec<f64>) -> Result<Self> {
        let norm: f64 = lift.iter().map(|v| v * v).sum();
        if lift.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(invalid("lift vector must be finite and nonzero"));
        }
        Ok(ToyAutoencoder { lift })
    }

    pub fn lift(&self) -> &[f64] {
        &self.lift
    }

    /// Pooled scalar field `z·L/‖L‖²` of a latent code.
    pub fn project(&self, z: &LatentCode) -> Result<Vec<f64>> {
        let c = self.lift.len();
        if z.shape().len() != 4 || z.shape()[0] != c {
            return Err(Error::Shape(format!("latent shape {:?} must be [{c}, d, h, w]", z.shape())));
        }
        let spatial = z.len() / c;
        let norm: f64 = self.lift.iter().map(|v| v * v).sum();
        let data = z.data();
        Ok((0..spatial)
            .map(|p| self.lift.iter().enumerate().map(|(ch, l)| l * data[ch * spatial + p]).sum::<f64>() / norm)
            .collect())
    }
}

impl Default for ToyAutoencoder {
    fn default() -> Self {
        ToyAutoencoder {
            lift: Self::DEFAULT_LIFT.to_vec(),
        }
    }
}

/// 2×2×2 block average of a volume.
pub fn average_pool(v: &Volume3D) -> Result<Vec<f64>> {
    let g = latent_grid_for(v.grid())?;
    let [_, h, w] = g.dims;
    Ok((0..g.len())
        .into_par_iter()
        .map(|p| {
            let (i, j, k) = (p / (h * w), (p / w) % h, p % w);
            let mut acc = 0.0;
            for di in 0..2 {
                for dj in 0..2 {
                    for dk in 0..2 {
                        acc += v.get(2 * i + di, 2 * j + dj, 2 * k + dk);
                    }
                }
            }
            acc / 8.0
        })
        .collect())
}

impl AutoencoderPair for ToyAutoencoder {
    fn latent_channels(&self) -> usize {
        self.lift.len()
    }

    fn encode(&self, v: &Volume3D) -> Result<LatentCode> {
        if v.unit() != ValueUnit::Normalized {
            return Err(Error::UnitMismatch {
                expected: ValueUnit::Normalized.name(),
                found: v.unit().name(),
            });
        }
        let shape = self.latent_shape(v.grid())?;
        let pooled = average_pool(v)?;
        let data = self
            .lift
            .iter()
            .flat_map(|l| pooled.iter().map(move |s| l * s))
            .collect();
        LatentCode::new(shape, data, 0)
    }

    fn decode(&self, z: &LatentCode, target: &GridSpec) -> Result<Volume3D> {
        let lg = latent_grid_for(target)?;
        let expect = self.latent_shape(target)?;
        if z.shape() != expect.as_slice() {
            return Err(Error::Shape(format!("latent {:?} does not match {:?}", z.shape(), expect)));
        }
        let field = self.project(z)?;
        let out = Volume3D::from_fn(*target, ValueUnit::Normalized, |i, j, k| {
            let idx = lg.continuous_index(target.world_xyz(i, j, k));
            crate::volume::trilinear(&field, lg.dims, idx, Boundary::Clamp).clamp(0.0, 1.0)
        })?;
        Ok(out)
    }
}
