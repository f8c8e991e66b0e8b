//! Forward noising, reverse transitions, losses and guidance.

use rand::Rng;

use super::{check_len, Denoiser, LatentCode, NoiseSchedule};
use crate::error::{invalid, Result};
use crate::fusion::FeatureVolume;
use crate::rng::StreamRng;

/// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(x0: &LatentCode, t: usize, eps: &[f64], s: &NoiseSchedule) -> Result<LatentCode> {
    s.check_step(t)?;
    check_len("forward noise", x0.len(), eps.len())?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0.data().iter().zip(eps).map(|(x, e)| a * x + b * e).collect();
    LatentCode::new(x0.shape().to_vec(), data, t)
}

/// Reverse-process mean `(x_t − (1−α_t)/√(1−ᾱ_t)·ε̂) / √α_t`.
pub fn reverse_mean(x_t: &LatentCode, t: usize, eps_pred: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>> {
    s.check_step(t)?;
    check_len("predicted noise", x_t.len(), eps_pred.len())?;
    let coef = (1.0 - s.alpha(t)) / (1.0 - s.alpha_bar(t)).sqrt();
    let inv = 1.0 / s.alpha(t).sqrt();
    Ok(x_t
        .data()
        .iter()
        .zip(eps_pred)
        .map(|(x, e)| inv * (x - coef * e))
        .collect())
}

/// One ancestral step `x_{t-1} = μ + σ_t·z` with `σ_t² = β_t`; at `t = 1` the
/// noise is ignored and `μ` is returned.
pub fn reverse_step(
    x_t: &LatentCode,
    t: usize,
    eps_pred: &[f64],
    s: &NoiseSchedule,
    noise: &[f64],
) -> Result<LatentCode> {
    let mut mu = reverse_mean(x_t, t, eps_pred, s)?;
    if t > 1 {
        check_len("reverse noise", mu.len(), noise.len())?;
        let sigma = s.beta(t).sqrt();
        for (m, z) in mu.iter_mut().zip(noise) {
            *m += sigma * z;
        }
    }
    LatentCode::new(x_t.shape().to_vec(), mu, t - 1)
}

/// `x̂_0 = (x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
pub fn predict_x0(x_t: &LatentCode, t: usize, eps_pred: &[f64], s: &NoiseSchedule) -> Result<Vec<f64>> {
    s.check_step(t)?;
    check_len("predicted noise", x_t.len(), eps_pred.len())?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.data().iter().zip(eps_pred).map(|(x, e)| (x - b * e) / a).collect())
}

/// Mean squared error between the true noise and the denoiser's estimate
/// on `forward_sample(x0, t, eps)`.
pub fn denoise_loss(
    x0: &LatentCode,
    t: usize,
    eps: &[f64],
    denoiser: &dyn Denoiser,
    condition: Option<&FeatureVolume>,
    s: &NoiseSchedule,
) -> Result<f64> {
    let x_t = forward_sample(x0, t, eps, s)?;
    let pred = denoiser.predict_noise(&x_t, t, condition)?;
    check_len("denoiser output", eps.len(), pred.len())?;
    Ok(eps.iter().zip(&pred).map(|(e, p)| (e - p).powi(2)).sum::<f64>() / eps.len() as f64)
}

/// Classifier-free guidance `(1+w)·ε_c − w·ε_u`.
///
/// Evaluated as `ε_c + w·(ε_c − ε_u)`, which returns `ε_c` bit-exactly when
/// `w = 0` or when both estimates agree.
pub fn cfg_combine(eps_cond: &[f64], eps_uncond: &[f64], w: f64) -> Result<Vec<f64>> {
    check_len("unconditional noise", eps_cond.len(), eps_uncond.len())?;
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(c, u)| c + w * (c - u))
        .collect())
}

/// Guided noise estimate used by the samplers.
///
/// Without a condition this is the unconditional estimate; with one and
/// `w = 0` the unconditional pass is skipped since it cannot change the result.
pub fn guided_noise(
    denoiser: &dyn Denoiser,
    x_t: &LatentCode,
    t: usize,
    condition: Option<&FeatureVolume>,
    w: f64,
) -> Result<Vec<f64>> {
    let eps_c = denoiser.predict_noise(x_t, t, condition)?;
    check_len("denoiser output", x_t.len(), eps_c.len())?;
    if condition.is_none() || w == 0.0 {
        return Ok(eps_c);
    }
    let eps_u = denoiser.predict_noise(x_t, t, None)?;
    cfg_combine(&eps_c, &eps_u, w)
}

/// With probability `p` replaces the condition by the all-zero sentinel.
pub fn condition_dropout(condition: &FeatureVolume, p: f64, rng: &mut StreamRng) -> Result<FeatureVolume> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("dropout probability {p} outside [0, 1]")));
    }
    if rng.random::<f64>() < p {
        Ok(FeatureVolume::zeros(condition.channels(), *condition.grid()))
    } else {
        Ok(condition.clone())
    }
}
