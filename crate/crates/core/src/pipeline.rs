//! Condition-to-volume reconstruction.

use crate::diffusion::{sample, Denoiser, LatentCode, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::fusion::FeatureVolume;
use crate::latent::{latent_grid_for, quantize, AutoencoderPair, Codebook};
use crate::volume::{GridSpec, Volume3D};

/// Latent sampler followed by an optional quantizer and a decoder.
pub struct Reconstructor<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub autoencoder: &'a dyn AutoencoderPair,
    pub schedule: &'a NoiseSchedule,
    pub sampler: SamplerConfig,
    pub codebook: Option<&'a Codebook>,
}

impl Reconstructor<'_> {
    /// Samples a latent for `target`; the condition must live on the latent grid.
    pub fn sample_latent(&self, condition: Option<&FeatureVolume>, target: &GridSpec, seed: u64) -> Result<LatentCode> {
        let shape = self.autoencoder.latent_shape(target)?;
        if let Some(c) = condition {
            let lg = latent_grid_for(target)?;
            if c.grid().dims != lg.dims {
                return Err(Error::Shape(format!(
                    "condition grid {:?} does not match latent grid {:?}",
                    c.grid().dims,
                    lg.dims
                )));
            }
        }
        let z = sample(self.denoiser, condition, self.schedule, &shape, &self.sampler, seed)?;
        match self.codebook {
            Some(cb) => Ok(quantize(&z, cb)?.z_q),
            None => Ok(z),
        }
    }

    pub fn reconstruct(&self, condition: Option<&FeatureVolume>, target: &GridSpec, seed: u64) -> Result<Volume3D> {
        let z = self.sample_latent(condition, target, seed)?;
        self.autoencoder.decode(&z, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{linear_schedule, AnalyticGaussianDenoiser, SamplerKind, SolverOrder};
    use crate::latent::ToyAutoencoder;

    #[test]
    fn deterministic_and_shaped() {
        let s = linear_schedule(100, 1e-4, 0.02).unwrap();
        let den = AnalyticGaussianDenoiser::new(s.clone(), 0.3, 0.01).unwrap();
        let ae = ToyAutoencoder::default();
        let r = Reconstructor {
            denoiser: &den,
            autoencoder: &ae,
            schedule: &s,
            sampler: SamplerConfig {
                kind: SamplerKind::Fast {
                    steps: 10,
                    order: SolverOrder::Second,
                },
                guidance: 1.0,
            },
            codebook: None,
        };
        let g = GridSpec::cube(8, 1.0).unwrap();
        let a = r.reconstruct(None, &g, 5).unwrap();
        assert_eq!(a.dims(), [8, 8, 8]);
        assert_eq!(a, r.reconstruct(None, &g, 5).unwrap());
        let bad = FeatureVolume::zeros(1, GridSpec::cube(8, 1.0).unwrap());
        assert!(r.reconstruct(Some(&bad), &g, 5).is_err());
    }
}
