//! Denoising diffusion in latent space.
//!
//! Time indices run `t = 1..=T`; `alpha_bar(0)` is 1. Noise is always either
//! passed in by the caller or drawn from a seeded stream, so every sampler is
//! a deterministic function of its seed.

mod process;
mod sampler;
mod schedule;
mod toy;

use crate::error::{Error, Result};
use crate::fusion::FeatureVolume;

pub use process::{
    cfg_combine, condition_dropout, denoise_loss, forward_sample, guided_noise, predict_x0,
    reverse_mean, reverse_step,
};
pub use sampler::{
    fast_timesteps, half_log_snr, sample, sample_ancestral, sample_ancestral_observed, sample_fast,
    sample_fast_observed, SamplerConfig, SamplerKind, SolverOrder,
};
pub use schedule::{linear_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
pub use toy::{analytic_gaussian_denoiser, posterior_mean, AnalyticGaussianDenoiser, ConditionalGaussianDenoiser};

pub const DEFAULT_GUIDANCE: f64 = 1.0;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_FAST_STEPS: usize = 10;

/// A latent tensor of fixed shape tagged with its diffusion time.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub t: usize,
}

impl LatentCode {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, t: usize) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n == 0 {
            return Err(Error::Shape(format!("latent shape {shape:?} is empty")));
        }
        if n != data.len() {
            return Err(Error::Shape(format!(
                "latent shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("latent code holds non-finite values".into()));
        }
        Ok(LatentCode { shape, data, t })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        LatentCode {
            shape,
            data: vec![0.0; n],
            t: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population variance over all elements.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.data.len() as f64
    }
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("{what}: expected {expected} values, got {got}")));
    }
    Ok(())
}

/// Noise predictor `ε_θ(x_t, t, c)`.
///
/// `condition = None` is the absent-condition sentinel. Implementations that
/// concatenate the condition to `x_t` substitute zeros for it, and must treat
/// an all-zero condition the same way as `None`.
pub trait Denoiser: Sync {
    fn predict_noise(&self, x_t: &LatentCode, t: usize, condition: Option<&FeatureVolume>) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, x_t: &LatentCode, t: usize, condition: Option<&FeatureVolume>) -> Result<Vec<f64>> {
        (**self).predict_noise(x_t, t, condition)
    }
}
