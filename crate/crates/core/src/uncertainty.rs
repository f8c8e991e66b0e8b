//! Monte Carlo posterior statistics.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::Image2D;
use crate::metrics::MetricRow;
use crate::volume::{Plane, ValueUnit, Volume3D};

pub const DEFAULT_MC_SAMPLES: usize = 100;

/// Relative tolerance of the per-voxel `mse = bias² + variance` check.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Seeds `base ^ n` for `n = 0..count`.
pub fn mc_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|n| base ^ n).collect()
}

/// Draws one sample per seed in parallel; results keep seed order.
pub fn mc_sample_seeds<F>(seeds: &[u64], draw: F) -> Result<Vec<Volume3D>>
where
    F: Fn(u64) -> Result<Volume3D> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Empty("Monte Carlo sample"));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("Monte Carlo seeds must be distinct"));
    }
    seeds.par_iter().map(|&s| draw(s)).collect()
}

/// Draws `n` samples with seeds `base_seed ^ i`.
pub fn mc_sample<F>(n: usize, base_seed: u64, draw: F) -> Result<Vec<Volume3D>>
where
    F: Fn(u64) -> Result<Volume3D> + Sync,
{
    mc_sample_seeds(&mc_seeds(base_seed, n), draw)
}

/// Per-voxel Monte Carlo statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMaps {
    pub mean: Volume3D,
    /// Population (divide-by-N) variance.
    pub variance: Volume3D,
    pub bias: Option<Volume3D>,
    pub squared_bias: Option<Volume3D>,
    pub mse: Option<Volume3D>,
    pub n_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Mean,
    Variance,
    Bias,
    SquaredBias,
    Mse,
}

impl MapKind {
    pub const ALL: [MapKind; 5] = [
        MapKind::Mean,
        MapKind::Variance,
        MapKind::Bias,
        MapKind::SquaredBias,
        MapKind::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Mean => "mean",
            MapKind::Variance => "variance",
            MapKind::Bias => "bias",
            MapKind::SquaredBias => "squared_bias",
            MapKind::Mse => "mse",
        }
    }
}

impl UncertaintyMaps {
    pub fn get(&self, kind: MapKind) -> Option<&Volume3D> {
        match kind {
            MapKind::Mean => Some(&self.mean),
            MapKind::Variance => Some(&self.variance),
            MapKind::Bias => self.bias.as_ref(),
            MapKind::SquaredBias => self.squared_bias.as_ref(),
            MapKind::Mse => self.mse.as_ref(),
        }
    }

    /// Volume-averaged summary rows.
    pub fn summary_rows(&self) -> Vec<MetricRow> {
        let mut rows = vec![
            MetricRow::new("n_samples", self.n_samples as f64),
            MetricRow::new("mean_variance", self.variance.mean()),
        ];
        if let (Some(b2), Some(m)) = (&self.squared_bias, &self.mse) {
            rows.push(MetricRow::new("mean_squared_bias", b2.mean()));
            rows.push(MetricRow::new("mean_mse", m.mean()));
        }
        rows
    }
}

/// Per-voxel mean, variance and, with ground truth, bias and MSE.
///
/// Values at each voxel are sorted before accumulation, so the result does
/// not depend on sample order. With ground truth the identity
/// `mse = bias² + variance` is checked at every voxel.
pub fn voxel_stats(samples: &[Volume3D], ground_truth: Option<&Volume3D>) -> Result<UncertaintyMaps> {
    let first = samples.first().ok_or(Error::Empty("sample"))?;
    let grid = *first.grid();
    for s in samples {
        if s.dims() != grid.dims {
            return Err(Error::Shape(format!("sample {:?} vs {:?}", s.dims(), grid.dims)));
        }
    }
    if let Some(gt) = ground_truth {
        if gt.dims() != grid.dims {
            return Err(Error::Shape(format!("ground truth {:?} vs {:?}", gt.dims(), grid.dims)));
        }
    }
    let n = samples.len() as f64;
    let stats: Vec<[f64; 5]> = (0..grid.len())
        .into_par_iter()
        .map(|v| {
            let mut xs: Vec<f64> = samples.iter().map(|s| s.data()[v]).collect();
            xs.sort_unstable_by(f64::total_cmp);
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            match ground_truth {
                Some(gt) => {
                    let y = gt.data()[v];
                    let bias = mean - y;
                    let mse = xs.iter().map(|x| (x - y) * (x - y)).sum::<f64>() / n;
                    [mean, var, bias, bias * bias, mse]
                }
                None => [mean, var, 0.0, 0.0, 0.0],
            }
        })
        .collect();

    if ground_truth.is_some() {
        if let Some((v, s)) = stats
            .iter()
            .enumerate()
            .find(|(_, s)| (s[4] - (s[3] + s[1])).abs() > IDENTITY_TOL * s[4].max(1.0))
        {
            return Err(Error::Numerical(format!(
                "voxel {v}: mse {} != bias^2 {} + variance {}",
                s[4], s[3], s[1]
            )));
        }
    }

    let field = |c: usize, unit: ValueUnit| Volume3D::new(grid, unit, stats.iter().map(|s| s[c]).collect());
    let with_gt = |c: usize| -> Result<Option<Volume3D>> {
        ground_truth.map(|_| field(c, ValueUnit::Hu)).transpose()
    };
    Ok(UncertaintyMaps {
        mean: field(0, first.unit())?,
        variance: field(1, ValueUnit::Hu)?,
        bias: with_gt(2)?,
        squared_bias: with_gt(3)?,
        mse: with_gt(4)?,
        n_samples: samples.len(),
    })
}

/// Slice of one map; `index` defaults to the center slice.
pub fn render_maps(maps: &UncertaintyMaps, kind: MapKind, plane: Plane, index: Option<usize>) -> Result<Image2D> {
    let map = maps
        .get(kind)
        .ok_or_else(|| invalid(format!("{} map needs ground truth", kind.name())))?;
    let index = index.unwrap_or(map.dims()[plane.axis()] / 2);
    map.slice(plane, index)
}
